#include "w2sd/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "w2sd/errors.hpp"
#include "w2sd/rng.hpp"

namespace w2sd {

double grad_check(const LossClosure& loss, const ParamVector& analytic, const ParamVector& params,
                  std::size_t probes, double h, std::uint64_t seed) {
  if (analytic.size() != params.size())
    throw ConfigError("grad_check", "analytic gradient size does not match parameters");
  const std::size_t n = params.size();
  if (n == 0) return 0.0;

  // Distinct coordinates when possible, otherwise every coordinate.
  std::vector<std::size_t> coords(n);
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  Rng rng(seed);
  const std::size_t count = std::min(probes, n);
  for (std::size_t i = 0; i < count; ++i) std::swap(coords[i], coords[i + rng.index(n - i)]);
  coords.resize(count);

  ParamVector probe = params;
  double worst = 0.0;
  for (std::size_t c : coords) {
    const double original = probe.values()[c];
    probe.values()[c] = original + h;
    const double up = loss(probe);
    probe.values()[c] = original - h;
    const double down = loss(probe);
    probe.values()[c] = original;
    const double numeric = (up - down) / (2.0 * h);
    const double a = analytic.values()[c];
    const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace w2sd
