#pragma once
// Serves one environment instance to one TCP client at a time, speaking the
// newline-delimited text protocol from wire.hpp. Session flow:
//
//   client: hello version=1
//   server: hello version=1 relays=N state_dim=D horizon=H relay_ids=...
//   client: reset [seed=S] [fault=0|1] [segment=K] [position=X]
//                 [impedance=Z] [onset=T] [fate_<id>=0|1 ...]
//   server: obs ... fault=0|1 [fseg= fpos= fzr= fzi= onset=] fate_<id>=...
//   client: step a=<one action index per relay, comma separated>
//   server: obs t= done= fault_active= g= v<k>= i<k>= b<k>= c<k>= r<k>=
//               opened= commanded= ignored=
//   client: close
//   server: close
//
// Every request gets exactly one response. Malformed or out-of-order
// requests get an `error text=...` response and the session stays usable;
// the two exceptions are a hello version the server does not speak and an
// oversized line, both of which close the connection after the error.

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstring>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "relayrl/episode.hpp"
#include "relayrl/wire.hpp"

namespace relayrl {

constexpr std::size_t kWireMaxLine = 1 << 20;

inline EpisodeOverride parse_override(const WireMessage& req) {
  EpisodeOverride ov;
  if (req.find("seed")) ov.seed = req.need_uint("seed");
  if (req.find("fault")) ov.force_fault = req.need_int("fault") != 0;
  if (req.find("segment")) ov.fault_segment = static_cast<int>(req.need_int("segment"));
  if (req.find("position")) ov.fault_position = req.need_double("position");
  if (req.find("impedance")) ov.fault_impedance = req.need_double("impedance");
  if (req.find("onset")) ov.onset = static_cast<int>(req.need_int("onset"));
  for (const auto& [k, v] : req.fields) {
    if (k.rfind("fate_", 0) != 0) continue;
    std::string id_part = k.substr(5);
    char* end = nullptr;
    long id = std::strtol(id_part.c_str(), &end, 10);
    if (id_part.empty() || end != id_part.c_str() + id_part.size())
      throw std::runtime_error("bad breaker fate key '" + k + "'");
    ov.breaker_fate[static_cast<int>(id)] = req.need_int(k) != 0;
  }
  return ov;
}

inline WireMessage observation_message(const StepResult& r) {
  WireMessage m;
  m.kind = "obs";
  m.add_int("t", r.t);
  m.add_int("done", r.done ? 1 : 0);
  m.add_int("fault_active", r.fault_active ? 1 : 0);
  m.add_double("g", r.global_reward);
  for (std::size_t k = 0; k < r.obs.size(); ++k) {
    const std::string suffix = std::to_string(k);
    m.add_doubles("v" + suffix, r.obs[k].voltage);
    m.add_doubles("i" + suffix, r.obs[k].current);
    m.add_int("b" + suffix, r.obs[k].breaker_closed ? 1 : 0);
    m.add_int("c" + suffix, r.obs[k].counter);
    m.add_double("r" + suffix, r.reward.empty() ? 0.0 : r.reward[k]);
  }
  m.add_ints("opened", r.opened);
  m.add_ints("commanded", r.commanded);
  m.add_ints("ignored", r.ignored);
  return m;
}

// Inverse of observation_message, for clients that mirror the remote episode.
inline StepResult parse_observation(const WireMessage& m, int relays) {
  StepResult r;
  r.t = static_cast<int>(m.need_int("t"));
  r.done = m.need_int("done") != 0;
  r.fault_active = m.need_int("fault_active") != 0;
  r.global_reward = m.need_double("g");
  for (int k = 0; k < relays; ++k) {
    const std::string suffix = std::to_string(k);
    RelayObservation o;
    o.voltage = m.need_doubles("v" + suffix);
    o.current = m.need_doubles("i" + suffix);
    o.breaker_closed = m.need_int("b" + suffix) != 0;
    o.counter = static_cast<int>(m.need_int("c" + suffix));
    r.obs.push_back(std::move(o));
    r.reward.push_back(m.need_double("r" + suffix));
  }
  r.opened = m.need_ints("opened");
  r.commanded = m.need_ints("commanded");
  r.ignored = m.need_ints("ignored");
  return r;
}

// Fault disclosure attached to the reset response; lets a remote policy see
// the same episode context an in-process one gets.
inline void attach_episode_context(WireMessage& m, const Environment& env) {
  if (env.fault()) {
    m.add_int("fault", 1);
    m.add_int("fseg", env.fault()->segment);
    m.add_double("fpos", env.fault()->position);
    m.add_double("fzr", env.fault()->impedance.real());
    m.add_double("fzi", env.fault()->impedance.imag());
    m.add_int("onset", env.fault()->onset_step);
  } else {
    m.add_int("fault", 0);
  }
  for (const auto& [id, stuck] : env.breaker_fates())
    m.add_int("fate_" + std::to_string(id), stuck ? 1 : 0);
}

inline EpisodeContext parse_episode_context(const WireMessage& m, const FeederTopology& topo,
                                            const std::vector<int>& relay_ids) {
  EpisodeContext ctx;
  ctx.topo = &topo;
  ctx.relay_ids = relay_ids;
  if (m.need_int("fault") != 0) {
    FaultSpec f;
    f.segment = static_cast<int>(m.need_int("fseg"));
    f.position = m.need_double("fpos");
    f.impedance = Complex{m.need_double("fzr"), m.need_double("fzi")};
    f.onset_step = static_cast<int>(m.need_int("onset"));
    ctx.fault = f;
  }
  for (int id : relay_ids)
    ctx.breaker_failed[id] = m.need_int("fate_" + std::to_string(id)) != 0;
  return ctx;
}

// Request/response state machine for one connection. Socket-free so the
// protocol rules are testable without networking.
class EnvSession {
 public:
  explicit EnvSession(Environment& env) : env_(&env) {}

  bool closed() const { return closed_; }

  // One request line in, one response line out.
  std::string handle(const std::string& line) {
    WireMessage req;
    try {
      req = decode_line(line);
    } catch (const std::exception& e) {
      return error_line(e.what());
    }
    try {
      return dispatch(req);
    } catch (const std::exception& e) {
      return error_line(e.what());
    }
  }

 private:
  std::string error_line(const std::string& text) {
    WireMessage m;
    m.kind = "error";
    m.add("text", text);
    return encode_line(m);
  }

  std::string dispatch(const WireMessage& req) {
    if (req.kind == "hello") {
      long long version = req.need_int("version");
      if (version != kWireVersion) {
        closed_ = true;
        return error_line("unsupported protocol version " + std::to_string(version) +
                          ", server speaks " + std::to_string(kWireVersion));
      }
      greeted_ = true;
      WireMessage ack;
      ack.kind = "hello";
      ack.add_int("version", kWireVersion);
      ack.add_int("relays", static_cast<int>(env_->relay_ids().size()));
      ack.add_int("state_dim", env_->state_dimension());
      ack.add_int("horizon", env_->config().horizon);
      ack.add_ints("relay_ids", env_->relay_ids());
      return encode_line(ack);
    }
    if (!greeted_) return error_line("handshake required: send hello first");
    if (req.kind == "reset") {
      last_ = env_->reset(parse_override(req));
      has_episode_ = true;
      WireMessage m = observation_message(last_);
      attach_episode_context(m, *env_);
      return encode_line(m);
    }
    if (req.kind == "step") {
      if (!has_episode_) return error_line("no active episode: send reset first");
      if (last_.done) return error_line("episode finished: send reset");
      last_ = env_->step(req.need_ints("a"));
      return encode_line(observation_message(last_));
    }
    if (req.kind == "close") {
      closed_ = true;
      WireMessage m;
      m.kind = "close";
      return encode_line(m);
    }
    return error_line("unsupported request kind '" + req.kind + "'");
  }

  Environment* env_;
  bool greeted_ = false;
  bool has_episode_ = false;
  bool closed_ = false;
  StepResult last_;
};

namespace detail {

inline void close_fd(int& fd) {
  if (fd >= 0) {
    ::close(fd);
    fd = -1;
  }
}

// poll for one event; returns false on timeout.
inline bool wait_fd(int fd, short events, int timeout_ms) {
  pollfd p{fd, events, 0};
  int rc = ::poll(&p, 1, timeout_ms);
  return rc > 0;
}

// Writes the whole message or nothing: a stop request is honored only before
// the first byte so a concurrent shutdown cannot truncate a line mid-stream.
// A peer that accepts no bytes for stall_limit_ms is treated as dead.
inline bool send_all(int fd, const std::string& data, const std::atomic<bool>* stop,
                     int stall_limit_ms = 10000) {
  std::size_t off = 0;
  int stalled_ms = 0;
  while (off < data.size()) {
    if (stop && stop->load() && off == 0) return false;
    if (!wait_fd(fd, POLLOUT, 200)) {
      stalled_ms += 200;
      const bool stopping = stop && stop->load();
      if (stalled_ms >= (stopping ? 2000 : stall_limit_ms)) return false;
      continue;
    }
    ssize_t n = ::send(fd, data.data() + off, data.size() - off, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN || errno == EWOULDBLOCK) continue;
      return false;
    }
    if (n > 0) stalled_ms = 0;
    off += static_cast<std::size_t>(n);
  }
  return true;
}

}  // namespace detail

// Owns one environment and serves it over TCP on the loopback interface,
// one client at a time; a new connection is only accepted after the previous
// one ends. Construction binds and starts the serving thread; stop() (or the
// destructor) shuts it down.
class EnvServer {
 public:
  EnvServer(FeederTopology topo, EpisodeConfig cfg, std::uint64_t seed, int port = 0)
      : env_(std::move(topo), cfg, seed) {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw std::runtime_error("socket: " + std::string(std::strerror(errno)));
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0) {
      int e = errno;
      detail::close_fd(listen_fd_);
      throw std::runtime_error("bind: " + std::string(std::strerror(e)));
    }
    if (::listen(listen_fd_, 1) < 0) {
      int e = errno;
      detail::close_fd(listen_fd_);
      throw std::runtime_error("listen: " + std::string(std::strerror(e)));
    }
    socklen_t len = sizeof addr;
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    thread_ = std::thread([this] { accept_loop(); });
  }

  ~EnvServer() { stop(); }

  EnvServer(const EnvServer&) = delete;
  EnvServer& operator=(const EnvServer&) = delete;

  int port() const { return port_; }

  // The environment is only safe to inspect while no client is connected.
  const Environment& environment() const { return env_; }

  void stop() {
    if (!stopping_.exchange(true)) {
      if (listen_fd_ >= 0) ::shutdown(listen_fd_, SHUT_RDWR);
    }
    if (thread_.joinable()) thread_.join();
    detail::close_fd(listen_fd_);
  }

 private:
  void accept_loop() {
    while (!stopping_.load()) {
      if (!detail::wait_fd(listen_fd_, POLLIN, 200)) continue;
      int client = ::accept(listen_fd_, nullptr, nullptr);
      if (client < 0) {
        if (errno == EINTR || errno == EAGAIN || errno == EWOULDBLOCK) continue;
        break;  // listener shut down
      }
      serve_client(client);
      detail::close_fd(client);
    }
  }

  void serve_client(int fd) {
    EnvSession session(env_);
    std::string buf;
    char chunk[4096];
    while (!stopping_.load()) {
      std::size_t newline = buf.find('\n');
      if (newline == std::string::npos) {
        if (buf.size() > kWireMaxLine) {
          WireMessage m;
          m.kind = "error";
          m.add("text", "line exceeds " + std::to_string(kWireMaxLine) + " bytes");
          detail::send_all(fd, encode_line(m) + "\n", &stopping_);
          return;
        }
        if (!detail::wait_fd(fd, POLLIN, 200)) continue;
        ssize_t n = ::recv(fd, chunk, sizeof chunk, 0);
        if (n == 0) return;  // client hung up
        if (n < 0) {
          if (errno == EINTR || errno == EAGAIN || errno == EWOULDBLOCK) continue;
          return;
        }
        buf.append(chunk, static_cast<std::size_t>(n));
        continue;
      }
      std::string line = buf.substr(0, newline);
      buf.erase(0, newline + 1);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      std::string response = session.handle(line);
      if (!detail::send_all(fd, response + "\n", &stopping_)) return;
      if (session.closed()) return;
    }
    // server shutdown with the session still open: notify before hanging up
    WireMessage bye;
    bye.kind = "close";
    detail::send_all(fd, encode_line(bye) + "\n", nullptr, 1000);
  }

  Environment env_;
  int listen_fd_ = -1;
  int port_ = 0;
  std::atomic<bool> stopping_{false};
  std::thread thread_;
};

// Blocking loopback client used by the command line tools and tests.
class WireClient {
 public:
  explicit WireClient(int port, const std::string& host = "127.0.0.1", int timeout_ms = 10000)
      : timeout_ms_(timeout_ms) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) throw std::runtime_error("socket: " + std::string(std::strerror(errno)));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
      detail::close_fd(fd_);
      throw std::runtime_error("bad host address '" + host + "'");
    }
    if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0) {
      int e = errno;
      detail::close_fd(fd_);
      throw std::runtime_error("connect: " + std::string(std::strerror(e)));
    }
  }

  ~WireClient() { detail::close_fd(fd_); }

  WireClient(const WireClient&) = delete;
  WireClient& operator=(const WireClient&) = delete;

  void send_line(const std::string& line) {
    if (!detail::send_all(fd_, line + "\n", nullptr))
      throw std::runtime_error("send failed: " + std::string(std::strerror(errno)));
  }

  // nullopt on orderly EOF, throws on timeout.
  std::optional<std::string> recv_line() {
    while (true) {
      std::size_t newline = buf_.find('\n');
      if (newline != std::string::npos) {
        std::string line = buf_.substr(0, newline);
        buf_.erase(0, newline + 1);
        return line;
      }
      if (!detail::wait_fd(fd_, POLLIN, timeout_ms_))
        throw std::runtime_error("timed out waiting for response");
      char chunk[4096];
      ssize_t n = ::recv(fd_, chunk, sizeof chunk, 0);
      if (n == 0) {
        if (buf_.empty()) return std::nullopt;
        std::string line = std::move(buf_);
        buf_.clear();
        return line;
      }
      if (n < 0) {
        if (errno == EINTR || errno == EAGAIN || errno == EWOULDBLOCK) continue;
        throw std::runtime_error("recv failed: " + std::string(std::strerror(errno)));
      }
      buf_.append(chunk, static_cast<std::size_t>(n));
    }
  }

  WireMessage request(const WireMessage& m) {
    send_line(encode_line(m));
    std::optional<std::string> line = recv_line();
    if (!line) throw std::runtime_error("server closed the connection");
    return decode_line(*line);
  }

 private:
  int fd_ = -1;
  int timeout_ms_;
  std::string buf_;
};

}  // namespace relayrl
