#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>

#include "w2sd/param_vector.hpp"

namespace w2sd {

using LossClosure = std::function<double(const ParamVector&)>;

/// Max over `probes` random coordinates of
/// |analytic - numeric| / max(1e-8, |analytic| + |numeric|),
/// with the numeric derivative taken by central differences of step h.
double grad_check(const LossClosure& loss, const ParamVector& analytic, const ParamVector& params,
                  std::size_t probes, double h = 1e-5, std::uint64_t seed = 0);

}  // namespace w2sd
