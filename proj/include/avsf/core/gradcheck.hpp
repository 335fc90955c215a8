#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "avsf/core/rng.hpp"
#include "avsf/core/tensor.hpp"

namespace avsf {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_leaf;
  int64_t worst_index = -1;
};

// Central-difference check of reverse-mode gradients. `loss_fn` must rebuild
// the graph from the current leaf values on every call and return a scalar.
// Leaves with requires_grad off are excluded from the report.
inline GradCheckReport gradcheck(const std::function<Tensor()>& loss_fn,
                                 const std::vector<std::pair<std::string, Tensor>>& leaves,
                                 double epsilon = 1e-5) {
  for (auto& [name, leaf] : leaves) const_cast<Tensor&>(leaf).zero_grad();
  backward(loss_fn());

  std::vector<std::vector<double>> analytic;
  analytic.reserve(leaves.size());
  for (auto& [name, leaf] : leaves) analytic.push_back(leaf.grad_or_zeros());

  GradCheckReport report;
  for (size_t li = 0; li < leaves.size(); ++li) {
    Tensor leaf = leaves[li].second;
    if (!leaf.requires_grad()) continue;
    for (int64_t i = 0; i < leaf.size(); ++i) {
      const double saved = leaf.data()[i];
      leaf.data()[i] = saved + epsilon;
      const double up = loss_fn().item();
      leaf.data()[i] = saved - epsilon;
      const double down = loss_fn().item();
      leaf.data()[i] = saved;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double rel = std::abs(analytic[li][static_cast<size_t>(i)] - numeric) /
                         std::max(1.0, std::abs(numeric));
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_leaf = leaves[li].first;
        report.worst_index = i;
      }
    }
  }
  return report;
}

// Sampled variant for large graphs: checks up to `max_elems` random elements
// per leaf instead of every element.
inline GradCheckReport gradcheck_sampled(const std::function<Tensor()>& loss_fn,
                                         const std::vector<std::pair<std::string, Tensor>>& leaves,
                                         double epsilon, int64_t max_elems, Rng& rng) {
  for (auto& [name, leaf] : leaves) const_cast<Tensor&>(leaf).zero_grad();
  backward(loss_fn());

  std::vector<std::vector<double>> analytic;
  analytic.reserve(leaves.size());
  for (auto& [name, leaf] : leaves) analytic.push_back(leaf.grad_or_zeros());

  GradCheckReport report;
  for (size_t li = 0; li < leaves.size(); ++li) {
    Tensor leaf = leaves[li].second;
    if (!leaf.requires_grad()) continue;
    const int64_t n = leaf.size();
    std::vector<int64_t> idx;
    if (n <= max_elems) {
      idx.resize(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
    } else {
      for (int64_t i = 0; i < max_elems; ++i) idx.push_back(rng.uniform_int(0, n - 1));
    }
    for (int64_t i : idx) {
      const double saved = leaf.data()[i];
      leaf.data()[i] = saved + epsilon;
      const double up = loss_fn().item();
      leaf.data()[i] = saved - epsilon;
      const double down = loss_fn().item();
      leaf.data()[i] = saved;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double rel = std::abs(analytic[li][static_cast<size_t>(i)] - numeric) /
                         std::max(1.0, std::abs(numeric));
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_leaf = leaves[li].first;
        report.worst_index = i;
      }
    }
  }
  return report;
}

}  // namespace avsf
