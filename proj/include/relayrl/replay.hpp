#pragma once

#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <utility>
#include <vector>

#include "relayrl/rng.hpp"

namespace relayrl {

struct Transition {
  std::vector<double> state;
  int action = 0;
  double reward = 0.0;
  std::vector<double> next_state;
  bool done = false;
};

// Fixed-capacity FIFO store; once full, each push overwrites the oldest
// entry. Sampling is uniform without replacement.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw std::invalid_argument("replay capacity must be positive");
  }

  void push(Transition t) {
    if (items_.size() < capacity_) {
      items_.push_back(std::move(t));
    } else {
      items_[head_] = std::move(t);
      head_ = (head_ + 1) % capacity_;
    }
  }

  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }

  // i = 0 is the oldest stored transition.
  const Transition& at(std::size_t i) const {
    if (i >= items_.size()) throw std::out_of_range("replay index out of range");
    return items_[(head_ + i) % items_.size()];
  }

  std::vector<const Transition*> sample(Rng& rng, std::size_t batch) const {
    if (batch > items_.size())
      throw std::invalid_argument("batch larger than the number of stored transitions");
    scratch_.resize(items_.size());
    std::iota(scratch_.begin(), scratch_.end(), std::size_t{0});
    std::vector<const Transition*> out(batch);
    for (std::size_t i = 0; i < batch; ++i) {
      std::size_t j = i + rng.uniform_int(static_cast<int>(items_.size() - i));
      std::swap(scratch_[i], scratch_[j]);
      out[i] = &items_[scratch_[i]];
    }
    return out;
  }

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;  // next overwrite target == oldest element once full
  std::vector<Transition> items_;
  mutable std::vector<std::size_t> scratch_;
};

}  // namespace relayrl
