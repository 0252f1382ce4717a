#include "equivariance.hpp"

#include "expm.hpp"

namespace cfasl {

AblationMask AblationMask::from_map(const std::map<std::string, bool>& m) {
  AblationMask mask;
  for (const auto& [key, on] : m) {
    if (key == "prediction")
      mask.prediction = on;
    else if (key == "commutative")
      mask.commutative = on;
    else if (key == "equivariance")
      mask.equivariance = on;
    else if (key == "parallel")
      mask.parallel = on;
    else if (key == "perpendicular")
      mask.perpendicular = on;
    else if (key == "sparsity")
      mask.sparsity = on;
    else
      throw_invalid("unknown loss name in ablation mask: '" + key +
                    "' (valid: prediction, commutative, equivariance, parallel, "
                    "perpendicular, sparsity)");
  }
  return mask;
}

std::map<std::string, bool> AblationMask::to_map() const {
  return {{"prediction", prediction},   {"commutative", commutative},
          {"equivariance", equivariance}, {"parallel", parallel},
          {"perpendicular", perpendicular}, {"sparsity", sparsity}};
}

Var encoder_equiv_loss(Graph& g, Var z1, Var z2, Var aggregate_algebra) {
  const Tensor& zv = g.value(z1);
  CFASL_CHECK_ARG(zv.numel() == g.value(z2).numel(),
                  "encoder_equiv_loss: latent size mismatch");
  const int64_t d = zv.numel();
  const Tensor& av = g.value(aggregate_algebra);
  CFASL_CHECK_ARG(av.rank() == 2 && av.dim(0) == d && av.dim(1) == d,
                  "encoder_equiv_loss: algebra shape mismatch");
  Var ginv = graph_expm(neg(aggregate_algebra));
  Var moved = matmul(ginv, reshape(z2, {d, 1}));
  return mse(reshape(z1, {d, 1}), moved);
}

Var decoder_equiv_loss(Graph& g, Var decoded, const Tensor& x2) {
  CFASL_CHECK_ARG(g.value(decoded).same_shape(x2),
                  "decoder_equiv_loss: image shape mismatch");
  return mse(decoded, g.constant(x2));
}

TotalObjective total_objective(Graph& g, const ObjectiveTerms& terms,
                               const LossWeights& weights, const AblationMask& mask) {
  CFASL_CHECK_ARG(weights.epsilon >= 0, "total_objective: epsilon must be >= 0");
  TotalObjective out;
  LossBreakdown& b = out.breakdown;
  b.vae = g.value(terms.vae).item();
  b.parallel = g.value(terms.parallel).item();
  b.perpendicular = g.value(terms.perpendicular).item();
  b.sparsity = g.value(terms.sparsity).item();
  b.commutative = g.value(terms.commutative).item();
  b.prediction = g.value(terms.prediction).item();
  b.encoder_equiv = g.value(terms.encoder_equiv).item();
  b.decoder_equiv = g.value(terms.decoder_equiv).item();

  auto w = [&](bool on, double weight) { return on ? weight : 0.0; };
  b.weights["vae"] = 1.0;
  b.weights["parallel"] = w(mask.parallel, weights.parallel);
  b.weights["perpendicular"] = w(mask.perpendicular, weights.perpendicular);
  b.weights["sparsity"] = w(mask.sparsity, weights.sparsity);
  b.weights["commutative"] = w(mask.commutative, weights.commutative);
  b.weights["prediction"] = w(mask.prediction, weights.prediction);
  b.weights["encoder_equiv"] = w(mask.equivariance, weights.encoder_equiv);
  b.weights["decoder_equiv"] = w(mask.equivariance, weights.epsilon);

  Var total = terms.vae;
  auto maybe_add = [&](Var term, double weight) {
    if (weight == 0.0) return;
    total = add(total, weight == 1.0 ? term : mul_scalar(term, weight));
  };
  maybe_add(terms.parallel, b.weights["parallel"]);
  maybe_add(terms.perpendicular, b.weights["perpendicular"]);
  maybe_add(terms.sparsity, b.weights["sparsity"]);
  maybe_add(terms.commutative, b.weights["commutative"]);
  maybe_add(terms.prediction, b.weights["prediction"]);
  maybe_add(terms.encoder_equiv, b.weights["encoder_equiv"]);
  maybe_add(terms.decoder_equiv, b.weights["decoder_equiv"]);
  out.total = total;
  b.total = g.value(total).item();
  return out;
}

}  // namespace cfasl
