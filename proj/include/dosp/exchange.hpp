#pragma once

// Incomplete utility exchange: node i hears node j's utility with probability p.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "dosp/rng.hpp"

namespace dosp {

using NodeSet = std::vector<std::size_t>; ///< sorted node indices

struct ExchangeModel {
  double p = 1.0;

  explicit ExchangeModel(double probability = 1.0) : p(probability) { validate(); }

  void validate() const {
    if (!(p > 0.0 && p <= 1.0)) throw std::invalid_argument("exchange.p must lie in (0, 1]");
  }
};

/// Subset I_i of {0..n-1} \ {i}; each member included independently with probability p.
inline NodeSet sample_subset(const ExchangeModel& model, std::size_t n, std::size_t i,
                             SplitMix64& rng) {
  NodeSet subset;
  subset.reserve(n - 1);
  for (std::size_t j = 0; j < n; ++j) {
    if (j == i) continue;
    if (model.p >= 1.0 || rng.uniform01() < model.p) subset.push_back(j);
  }
  return subset;
}

inline std::vector<NodeSet> sample_subsets(const ExchangeModel& model, std::size_t n,
                                           SplitMix64& rng) {
  if (n < 2) throw std::invalid_argument("exchange needs at least two nodes");
  std::vector<NodeSet> subsets;
  subsets.reserve(n);
  for (std::size_t i = 0; i < n; ++i) subsets.push_back(sample_subset(model, n, i, rng));
  return subsets;
}

/// Node i's estimate of the global utility from the utilities it heard:
/// u_i + (n-1)/|I| * sum_{j in I} u_j, or 0 when I is empty. With the full
/// subset the sum is taken in index order, so it equals the complete-information
/// sum bit for bit.
inline double incomplete_estimate(std::size_t i, std::span<const double> utilities,
                                  std::span<const std::size_t> subset) {
  const std::size_t n = utilities.size();
  if (std::find(subset.begin(), subset.end(), i) != subset.end())
    throw std::invalid_argument("incomplete_estimate: node's own index is in its subset");
  if (subset.empty()) return 0.0;
  if (subset.size() == n - 1) {
    double total = 0.0;
    for (double u : utilities) total += u;
    return total;
  }
  double heard = 0.0;
  for (std::size_t j : subset) heard += utilities[j];
  return utilities[i] + static_cast<double>(n - 1) / static_cast<double>(subset.size()) * heard;
}

struct NonemptyProbability {
  double q_derived; ///< 1 - (1-p)^(n-1): the subset has n-1 candidates
  double q_paper;   ///< 1 - (1-p)^n, as printed in the original derivation
};

inline NonemptyProbability q_nonempty(const ExchangeModel& model, std::size_t n) {
  if (n < 2) throw std::invalid_argument("q_nonempty needs at least two nodes");
  const double miss = 1.0 - model.p;
  return {1.0 - std::pow(miss, static_cast<double>(n - 1)),
          1.0 - std::pow(miss, static_cast<double>(n))};
}

/// Exact E over I_i of incomplete_estimate, by enumerating all 2^(n-1) subsets.
inline double lemma3_enumeration_oracle(std::size_t i, std::span<const double> utilities,
                                        double p) {
  const std::size_t n = utilities.size();
  if (n < 2) throw std::invalid_argument("enumeration oracle needs at least two nodes");
  if (n > 20) throw std::length_error("enumeration oracle limited to n <= 20");
  if (i >= n) throw std::out_of_range("node index out of range");
  ExchangeModel{p}.validate();

  std::vector<std::size_t> others;
  for (std::size_t j = 0; j < n; ++j)
    if (j != i) others.push_back(j);

  const std::uint32_t count = 1u << (n - 1);
  double expectation = 0.0;
  NodeSet subset;
  for (std::uint32_t mask = 0; mask < count; ++mask) {
    subset.clear();
    for (std::size_t b = 0; b < others.size(); ++b)
      if (mask & (1u << b)) subset.push_back(others[b]);
    const auto m = static_cast<double>(subset.size());
    const double weight = std::pow(p, m) * std::pow(1.0 - p, static_cast<double>(n - 1) - m);
    if (weight == 0.0) continue;
    expectation += weight * incomplete_estimate(i, utilities, subset);
  }
  return expectation;
}

} // namespace dosp
