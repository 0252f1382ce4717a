#pragma once

#include <map>
#include <string>

#include "graph.hpp"

namespace cfasl {

/// Per-step loss values as logged to losses.csv; `weights` records the
/// effective multiplier applied to each component (0 when masked off).
struct LossBreakdown {
  double vae = 0;
  double parallel = 0;
  double perpendicular = 0;
  double sparsity = 0;
  double commutative = 0;
  double prediction = 0;
  double encoder_equiv = 0;
  double decoder_equiv = 0;
  double total = 0;
  std::map<std::string, double> weights;
};

/// On/off switches for the pluggable losses; every ablation row of the
/// method's study is expressible. "equivariance" gates both the encoder and
/// decoder terms.
struct AblationMask {
  bool prediction = true;
  bool commutative = true;
  bool equivariance = true;
  bool parallel = true;
  bool perpendicular = true;
  bool sparsity = true;

  static AblationMask all_on() { return AblationMask{}; }
  static AblationMask all_off() {
    return AblationMask{false, false, false, false, false, false};
  }
  /// Keys: prediction, commutative, equivariance, parallel, perpendicular,
  /// sparsity. Unknown keys raise invalid-argument.
  static AblationMask from_map(const std::map<std::string, bool>& m);
  std::map<std::string, bool> to_map() const;
};

/// Per-term weights; codebook terms default to unit weight and the decoder
/// equivariance term is scaled by epsilon.
struct LossWeights {
  double parallel = 1.0;
  double perpendicular = 1.0;
  double sparsity = 1.0;
  double commutative = 1.0;
  double prediction = 1.0;
  double encoder_equiv = 1.0;
  double epsilon = 0.1;  // decoder equivariance weight
};

/// MSE between z1 and exp(-aggregate) z2; the inverse group element is
/// produced by negating the algebra, never by matrix inversion.
Var encoder_equiv_loss(Graph& g, Var z1, Var z2, Var aggregate_algebra);

/// MSE between already-decoded images (sigmoid outputs of decode(g z1)) and
/// the paired target images x2.
Var decoder_equiv_loss(Graph& g, Var decoded, const Tensor& x2);

struct ObjectiveTerms {
  Var vae;
  Var parallel, perpendicular, sparsity, commutative, prediction;
  Var encoder_equiv, decoder_equiv;
};

struct TotalObjective {
  Var total;
  LossBreakdown breakdown;
};

/// Weighted, masked sum of all components. The VAE term is always present.
TotalObjective total_objective(Graph& g, const ObjectiveTerms& terms,
                               const LossWeights& weights, const AblationMask& mask);

}  // namespace cfasl
