#pragma once

#include <string>
#include <vector>

#include "rng.hpp"
#include "tensor.hpp"

namespace cfasl {

/// Images plus integer ground-truth factor labels. For exhaustive datasets
/// the rows enumerate the full Cartesian product of factor values; when they
/// additionally follow canonical mixed-radix order, factor combinations can
/// be ranked directly to row indices.
struct FactorDataset {
  int64_t n = 0;
  int64_t channels = 1;
  int64_t height = 0;
  int64_t width = 0;
  std::vector<float> images;          // N*C*H*W, values in [0,1]
  std::vector<int64_t> factors;       // N*F row-major
  std::vector<int64_t> factor_sizes;  // length F
  std::vector<std::string> factor_names;
  bool exhaustive = false;
  bool canonical = false;  // rows in mixed-radix factor order
  int64_t clamp_warnings = 0;  // shapes clipped at the image border
  uint64_t seed = 0;

  int64_t num_factors() const { return static_cast<int64_t>(factor_sizes.size()); }
  int64_t pixels_per_image() const { return channels * height * width; }
  int64_t factor(int64_t row, int64_t f) const {
    return factors[static_cast<size_t>(row * num_factors() + f)];
  }
  /// Mixed-radix rank of a factor combination (canonical datasets only).
  int64_t rank_of(const std::vector<int64_t>& values) const;
  /// [rows.size(), C, H, W] double tensor.
  Tensor image_batch(const std::vector<int64_t>& rows) const;
  void validate() const;
};

/// Shape kinds the synthetic renderer knows.
enum class ShapeKind { square, ellipse, triangle };
ShapeKind shape_kind_from_string(const std::string& s);
std::string shape_kind_to_string(ShapeKind k);

/// Grid specification: axes with more than one value become factors; axes
/// with exactly one value are rendered but not listed as factors.
struct SyntheticGrid {
  int64_t positions_x = 8;
  int64_t positions_y = 8;
  int64_t scales = 2;
  std::vector<ShapeKind> shapes = {ShapeKind::square, ShapeKind::ellipse};
};

/// Renders the exhaustive Cartesian product of axis-aligned binary shapes.
/// image_size must be 16, 32 or 64; shapes running past the border are
/// clipped and counted in clamp_warnings.
FactorDataset generate_synthetic(const SyntheticGrid& grid, int64_t image_size,
                                 uint64_t seed);

/// Loads a dSprites-style archive: zip of named arrays with keys `imgs`
/// (N x H x W) and `latents_classes` (N x F). Constant factor columns (the
/// color column of the official archive) are dropped. Missing keys or
/// inconsistent counts raise a corrupt-archive io error.
FactorDataset load_dsprites(const std::string& path);

/// Uniform subsample without replacement; the result is non-exhaustive.
FactorDataset subsample(const FactorDataset& ds, double fraction, uint64_t seed);

struct FactorQuery {
  std::vector<int64_t> fixed_factors;
  std::vector<int64_t> fixed_values;
  void validate(const FactorDataset& ds) const;
};

/// n row indices whose factors match the query; the remaining factors are
/// uniform over their ranges (draws are independent). Raises
/// invalid-argument when nothing matches.
std::vector<int64_t> sample_with_fixed_factors(const FactorDataset& ds,
                                               const FactorQuery& query, int64_t n,
                                               Rng& rng);

// On-disk directory format: manifest.json + images.f32 (little-endian
// float32) + factors.i32 (little-endian int32).
void save_dataset(const FactorDataset& ds, const std::string& dir);
FactorDataset load_dataset_dir(const std::string& dir);

/// Dispatches on the path: .npz archives go to load_dsprites, directories
/// with a manifest.json to load_dataset_dir.
FactorDataset open_dataset(const std::string& path);

}  // namespace cfasl
