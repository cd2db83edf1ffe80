#pragma once

#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "relayrl/rng.hpp"

namespace relayrl {

// Fully connected network with rectified-linear hidden layers and a linear
// output. Parameters live in one flat vector, layer by layer, each layer's
// weight matrix (row-major, out x in) followed by its bias vector; the
// gradient buffer mirrors that layout exactly.
class Mlp {
 public:
  struct Cache {
    std::vector<std::vector<double>> act;  // act[0] is the input
    std::vector<std::vector<double>> pre;  // pre-activation of each layer
  };

  explicit Mlp(std::vector<int> layers) : layers_(std::move(layers)) {
    if (layers_.size() < 2) throw std::invalid_argument("need an input and an output layer");
    for (int n : layers_)
      if (n <= 0) throw std::invalid_argument("layer sizes must be positive");
    std::size_t n = 0;
    for (std::size_t l = 1; l < layers_.size(); ++l) {
      offsets_.push_back(n);
      n += static_cast<std::size_t>(layers_[l]) * layers_[l - 1] + layers_[l];
    }
    params_.assign(n, 0.0);
    grads_.assign(n, 0.0);
  }

  // He-uniform hidden weights; the output layer starts near zero so initial
  // value estimates are flat. All biases start at zero.
  Mlp(std::vector<int> layers, Rng& rng) : Mlp(std::move(layers)) {
    for (std::size_t l = 1; l < layers_.size(); ++l) {
      const int in = layers_[l - 1], out = layers_[l];
      const bool output_layer = l + 1 == layers_.size();
      const double limit = output_layer ? 1e-3 : std::sqrt(6.0 / in);
      double* w = params_.data() + offsets_[l - 1];
      for (int i = 0; i < out * in; ++i) w[i] = rng.uniform(-limit, limit);
    }
  }

  const std::vector<int>& layers() const { return layers_; }
  std::size_t parameter_count() const { return params_.size(); }
  std::vector<double>& parameters() { return params_; }
  const std::vector<double>& parameters() const { return params_; }
  std::vector<double>& gradients() { return grads_; }
  const std::vector<double>& gradients() const { return grads_; }
  void zero_gradients() { grads_.assign(grads_.size(), 0.0); }

  std::vector<double> forward(const std::vector<double>& x) const {
    check_input(x);
    std::vector<double> a = x, z;
    for (std::size_t l = 1; l < layers_.size(); ++l) {
      affine(l, a, z);
      if (l + 1 < layers_.size())
        for (double& v : z) v = v > 0.0 ? v : 0.0;
      a.swap(z);
    }
    return a;
  }

  std::vector<double> forward(const std::vector<double>& x, Cache& cache) const {
    check_input(x);
    cache.act.assign(1, x);
    cache.pre.clear();
    std::vector<double> z;
    for (std::size_t l = 1; l < layers_.size(); ++l) {
      affine(l, cache.act.back(), z);
      cache.pre.push_back(z);
      if (l + 1 < layers_.size())
        for (double& v : z) v = v > 0.0 ? v : 0.0;
      cache.act.push_back(std::move(z));
      z.clear();
    }
    return cache.act.back();
  }

  // Accumulates d(loss)/d(params) into the gradient buffer given the cache of
  // a forward pass and d(loss)/d(output). The rectifier passes gradient only
  // where the pre-activation was strictly positive.
  void backward(const Cache& cache, const std::vector<double>& dout) {
    if (cache.act.size() != layers_.size())
      throw std::invalid_argument("cache does not match this network");
    if (dout.size() != static_cast<std::size_t>(layers_.back()))
      throw std::invalid_argument("output gradient has the wrong size");
    std::vector<double> g = dout, gprev;
    for (std::size_t l = layers_.size() - 1; l >= 1; --l) {
      const int in = layers_[l - 1], out = layers_[l];
      const double* w = params_.data() + offsets_[l - 1];
      double* gw = grads_.data() + offsets_[l - 1];
      double* gb = gw + static_cast<std::size_t>(out) * in;
      const std::vector<double>& a = cache.act[l - 1];
      for (int i = 0; i < out; ++i) {
        const double gi = g[i];
        double* gwi = gw + static_cast<std::size_t>(i) * in;
        for (int j = 0; j < in; ++j) gwi[j] += gi * a[j];
        gb[i] += gi;
      }
      if (l == 1) break;
      gprev.assign(in, 0.0);
      for (int i = 0; i < out; ++i) {
        const double gi = g[i];
        const double* wi = w + static_cast<std::size_t>(i) * in;
        for (int j = 0; j < in; ++j) gprev[j] += wi[j] * gi;
      }
      const std::vector<double>& zprev = cache.pre[l - 2];
      for (int j = 0; j < in; ++j)
        if (zprev[j] <= 0.0) gprev[j] = 0.0;
      g.swap(gprev);
    }
  }

  // params <- (1 - tau) * params + tau * online; tau = 1 is an exact copy
  void soft_update_toward(const Mlp& online, double tau) {
    if (online.layers_ != layers_) throw std::invalid_argument("layer shapes differ");
    for (std::size_t i = 0; i < params_.size(); ++i)
      params_[i] = (1.0 - tau) * params_[i] + tau * online.params_[i];
  }

 private:
  void check_input(const std::vector<double>& x) const {
    if (x.size() != static_cast<std::size_t>(layers_.front()))
      throw std::invalid_argument("input has size " + std::to_string(x.size()) + ", expected " +
                                  std::to_string(layers_.front()));
  }

  void affine(std::size_t l, const std::vector<double>& a, std::vector<double>& out) const {
    const int in = layers_[l - 1], n = layers_[l];
    const double* w = params_.data() + offsets_[l - 1];
    const double* b = w + static_cast<std::size_t>(n) * in;
    out.assign(n, 0.0);
    for (int i = 0; i < n; ++i) {
      double acc = b[i];
      const double* wi = w + static_cast<std::size_t>(i) * in;
      for (int j = 0; j < in; ++j) acc += wi[j] * a[j];
      out[i] = acc;
    }
  }

  std::vector<int> layers_;
  std::vector<std::size_t> offsets_;  // flat offset of each layer's weights
  std::vector<double> params_, grads_;
};

// FNV-1a over the raw parameter bytes; any parameter change changes the hash.
inline std::uint64_t parameter_hash(const Mlp& net) {
  std::uint64_t h = 1469598103934665603ULL;
  for (double p : net.parameters()) {
    const std::uint64_t bits = std::bit_cast<std::uint64_t>(p);
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xff;
      h *= 1099511628211ULL;
    }
  }
  return h;
}

}  // namespace relayrl
