#pragma once

#include <cstddef>

#include "w2sd/param_vector.hpp"
#include "w2sd/types.hpp"

namespace w2sd {

class Rng;

/// Scalar critic on top of frozen backbone features: Linear -> SiLU -> Linear.
/// Its parameters ("disc/...") are fresh and shared with nothing else.
class DiscriminatorHead {
 public:
  DiscriminatorHead(std::size_t feature_dim, std::size_t hidden, std::size_t tap);

  std::size_t feature_dim() const { return feature_dim_; }
  std::size_t hidden() const { return hidden_; }
  /// Backbone hidden layer whose activations feed the head.
  std::size_t tap() const { return tap_; }

  ParamVector init_params(Rng& rng) const;

  struct Cache {
    Matrix features;
    Matrix pre;
    Matrix act;
  };

  /// n scores.
  Vector forward(const ParamVector& params, const Matrix& features, Cache* cache = nullptr) const;

  struct Gradients {
    ParamVector params;
    Matrix features;
  };
  Gradients backward(const ParamVector& params, const Cache& cache, const Vector& upstream,
                     bool feature_grad) const;

 private:
  std::size_t feature_dim_;
  std::size_t hidden_;
  std::size_t tap_;
};

/// Hinge terms of the discriminator objective and their (sub)gradients
/// with respect to the scores. At a hinge argument of exactly 0 the
/// subgradient is taken as 0.
struct HingeLoss {
  double loss = 0.0;
  Vector grad_real;
  Vector grad_fake;
};

HingeLoss hinge_discriminator_loss(const Vector& real_scores, const Vector& fake_scores);

}  // namespace w2sd
