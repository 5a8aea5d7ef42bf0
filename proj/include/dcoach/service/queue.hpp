#pragma once

#include <chrono>
#include <condition_variable>
#include <functional>
#include <mutex>
#include <optional>
#include <vector>

namespace dcoach::service {

// Multi-producer inbox drained once per step; only the newest item survives a drain.
template <typename T>
class CoalescingQueue {
 public:
  struct Drained {
    std::optional<T> latest;
    std::vector<T> superseded;  // older items in arrival order
  };

  void push(T item) {
    std::lock_guard lock(mu_);
    items_.push_back(std::move(item));
  }

  Drained drain() {
    std::vector<T> items;
    {
      std::lock_guard lock(mu_);
      items.swap(items_);
    }
    Drained d;
    if (items.empty()) return d;
    d.latest.emplace(std::move(items.back()));
    items.pop_back();
    d.superseded = std::move(items);
    return d;
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return items_.size();
  }

 private:
  mutable std::mutex mu_;
  std::vector<T> items_;
};

// Single-value mailbox between one producer and one consumer: put never blocks and overwrites an
// unread value, so a slow consumer sees the newest value instead of a backlog.
template <typename T>
class LatestSlot {
 public:
  using Notify = std::function<void()>;

  void set_notify(Notify n) {
    std::lock_guard lock(mu_);
    notify_ = std::move(n);
  }

  void put(T value) {
    Notify n;
    {
      std::lock_guard lock(mu_);
      if (value_) ++skipped_;
      value_.emplace(std::move(value));
      n = notify_;
    }
    cv_.notify_one();
    if (n) n();
  }

  std::optional<T> take() {
    std::lock_guard lock(mu_);
    std::optional<T> out;
    out.swap(value_);
    return out;
  }

  template <typename Rep, typename Period>
  std::optional<T> wait_take(std::chrono::duration<Rep, Period> timeout) {
    std::unique_lock lock(mu_);
    cv_.wait_for(lock, timeout, [&] { return value_.has_value() || closed_; });
    std::optional<T> out;
    out.swap(value_);
    return out;
  }

  void close() {
    {
      std::lock_guard lock(mu_);
      closed_ = true;
      notify_ = nullptr;
    }
    cv_.notify_all();
  }

  bool closed() const {
    std::lock_guard lock(mu_);
    return closed_;
  }

  std::size_t skipped() const {
    std::lock_guard lock(mu_);
    return skipped_;
  }

 private:
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::optional<T> value_;
  std::size_t skipped_ = 0;
  bool closed_ = false;
  Notify notify_;
};

}  // namespace dcoach::service
