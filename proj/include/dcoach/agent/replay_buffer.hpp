#pragma once

#include <deque>
#include <random>
#include <stdexcept>
#include <vector>

#include "dcoach/tensor.hpp"

namespace dcoach {

struct ReplayEntry {
  Tensor state;
  Tensor label;
};

// Bounded FIFO of (state, corrected label) pairs.
//   capacity      K: maximum stored pairs; the oldest is evicted first
//   sample_size   N: mini-batch size drawn for replay updates
//   interval      b: steps between periodic buffer-only updates
class ReplayBuffer {
 public:
  ReplayBuffer() = default;
  ReplayBuffer(std::size_t capacity, std::size_t sample_size, std::size_t interval)
      : capacity_(capacity), sample_size_(sample_size), interval_(interval) {
    if (capacity_ == 0 || sample_size_ == 0 || interval_ == 0) {
      throw std::invalid_argument("replay buffer K, N and b must all be positive");
    }
  }

  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t sample_size() const noexcept { return sample_size_; }
  std::size_t interval() const noexcept { return interval_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }

  const ReplayEntry& operator[](std::size_t i) const { return entries_[i]; }
  const std::deque<ReplayEntry>& entries() const noexcept { return entries_; }

  void push(ReplayEntry e) {
    entries_.push_back(std::move(e));
    while (entries_.size() > capacity_) entries_.pop_front();
  }

  void clear() { entries_.clear(); }

  // Uniform with replacement when size() >= N; the whole buffer (in order) otherwise.
  template <typename Rng>
  std::vector<std::size_t> sample_indices(Rng& rng) const {
    std::vector<std::size_t> idx;
    if (entries_.size() < sample_size_) {
      idx.resize(entries_.size());
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      return idx;
    }
    std::uniform_int_distribution<std::size_t> pick(0, entries_.size() - 1);
    idx.resize(sample_size_);
    for (auto& i : idx) i = pick(rng);
    return idx;
  }

 private:
  std::size_t capacity_ = 1;
  std::size_t sample_size_ = 1;
  std::size_t interval_ = 1;
  std::deque<ReplayEntry> entries_;
};

}  // namespace dcoach
