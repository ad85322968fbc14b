#pragma once

#include <algorithm>
#include <cstddef>
#include <utility>
#include <vector>

#include "sjm/errors.hpp"

namespace sjm {

// Right-continuous step function that is 0 before its first jump time.
// Used for the Breslow cumulative baseline hazard.
class StepFunction {
 public:
  StepFunction() = default;

  // times must be strictly increasing; values[k] is the function value on
  // [times[k], times[k+1]).
  StepFunction(std::vector<double> times, std::vector<double> values)
      : times_(std::move(times)), values_(std::move(values)) {
    if (times_.size() != values_.size()) {
      throw ConfigError("step function times and values differ in length");
    }
    for (std::size_t k = 1; k < times_.size(); ++k) {
      if (!(times_[k] > times_[k - 1])) {
        throw ConfigError("step function times must be strictly increasing");
      }
    }
  }

  double operator()(double t) const {
    auto it = std::upper_bound(times_.begin(), times_.end(), t);
    if (it == times_.begin()) return 0.0;
    return values_[static_cast<std::size_t>(it - times_.begin()) - 1];
  }

  std::size_t size() const noexcept { return times_.size(); }
  bool empty() const noexcept { return times_.empty(); }
  const std::vector<double>& times() const noexcept { return times_; }
  const std::vector<double>& values() const noexcept { return values_; }

 private:
  std::vector<double> times_;
  std::vector<double> values_;
};

}  // namespace sjm
