#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "dosp/rng.hpp"

namespace dosp {

enum class PerturbationKind {
  symmetric_bernoulli,        ///< support {-1, +1}
  scaled_symmetric_bernoulli, ///< support {-amplitude, +amplitude}
};

/// Zero-mean i.i.d. bounded perturbation with E[phi^2] = alpha2 and |phi| <= alpha3.
struct PerturbationModel {
  PerturbationKind kind = PerturbationKind::symmetric_bernoulli;
  double amplitude = 1.0;

  static PerturbationModel bernoulli(double amplitude = 1.0) {
    PerturbationModel m;
    m.kind = amplitude == 1.0 ? PerturbationKind::symmetric_bernoulli
                              : PerturbationKind::scaled_symmetric_bernoulli;
    m.amplitude = amplitude;
    m.validate();
    return m;
  }

  void validate() const {
    if (!(amplitude > 0.0))
      throw std::invalid_argument("perturbation.amplitude must be positive");
    if (kind == PerturbationKind::symmetric_bernoulli && amplitude != 1.0)
      throw std::invalid_argument("symmetric Bernoulli perturbation has unit amplitude");
  }
};

struct PerturbationMoments {
  double alpha2; ///< second moment
  double alpha3; ///< amplitude bound
};

inline PerturbationMoments moments(const PerturbationModel& m) noexcept {
  return {m.amplitude * m.amplitude, m.amplitude};
}

inline double sample_component(const PerturbationModel& m, SplitMix64& rng) noexcept {
  return rng.coin() ? m.amplitude : -m.amplitude;
}

inline std::vector<double> sample_vector(const PerturbationModel& m, std::size_t n,
                                         SplitMix64& rng) {
  if (n == 0) throw std::invalid_argument("perturbation dimension must be at least 1");
  std::vector<double> phi(n);
  for (auto& v : phi) v = sample_component(m, rng);
  return phi;
}

} // namespace dosp
