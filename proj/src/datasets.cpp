#include "datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>

#include "npz.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace cfasl {

int64_t FactorDataset::rank_of(const std::vector<int64_t>& values) const {
  CFASL_CHECK_ARG(canonical, "rank_of: dataset rows are not in canonical order");
  CFASL_CHECK_ARG(static_cast<int64_t>(values.size()) == num_factors(),
                  "rank_of: wrong number of factor values");
  int64_t idx = 0;
  for (int64_t f = 0; f < num_factors(); ++f) {
    CFASL_CHECK_ARG(values[static_cast<size_t>(f)] >= 0 &&
                        values[static_cast<size_t>(f)] < factor_sizes[static_cast<size_t>(f)],
                    "rank_of: factor value out of range");
    idx = idx * factor_sizes[static_cast<size_t>(f)] + values[static_cast<size_t>(f)];
  }
  return idx;
}

Tensor FactorDataset::image_batch(const std::vector<int64_t>& rows) const {
  const int64_t px = pixels_per_image();
  Tensor out({static_cast<int64_t>(rows.size()), channels, height, width});
  for (size_t i = 0; i < rows.size(); ++i) {
    CFASL_CHECK_ARG(rows[i] >= 0 && rows[i] < n, "image_batch: row out of range");
    const float* src = images.data() + rows[i] * px;
    double* dst = out.data() + static_cast<int64_t>(i) * px;
    for (int64_t j = 0; j < px; ++j) dst[j] = static_cast<double>(src[j]);
  }
  return out;
}

void FactorDataset::validate() const {
  CFASL_CHECK_ARG(n >= 1, "dataset: empty");
  CFASL_CHECK_ARG(static_cast<int64_t>(images.size()) == n * pixels_per_image(),
                  "dataset: image buffer size mismatch");
  CFASL_CHECK_ARG(static_cast<int64_t>(factors.size()) == n * num_factors(),
                  "dataset: factor buffer size mismatch");
  for (int64_t row = 0; row < n; ++row)
    for (int64_t f = 0; f < num_factors(); ++f)
      CFASL_CHECK_ARG(factor(row, f) >= 0 &&
                          factor(row, f) < factor_sizes[static_cast<size_t>(f)],
                      "dataset: factor value out of range");
}

ShapeKind shape_kind_from_string(const std::string& s) {
  if (s == "square") return ShapeKind::square;
  if (s == "ellipse") return ShapeKind::ellipse;
  if (s == "triangle") return ShapeKind::triangle;
  throw_invalid("unknown shape kind '" + s + "' (square, ellipse, triangle)");
}

std::string shape_kind_to_string(ShapeKind k) {
  switch (k) {
    case ShapeKind::square: return "square";
    case ShapeKind::ellipse: return "ellipse";
    case ShapeKind::triangle: return "triangle";
  }
  throw_invalid("bad shape kind");
}

namespace {

// Renders one binary shape; returns true if any part was clipped.
bool render_shape(float* img, int64_t size, ShapeKind kind, double cx, double cy,
                  double extent) {
  bool clipped = false;
  const double rx = extent / 2.0;
  const double ry = extent / 2.0;
  const double lo_x = cx - rx, hi_x = cx + rx;
  const double lo_y = cy - ry, hi_y = cy + ry;
  if (lo_x < -0.5 || lo_y < -0.5 || hi_x > size - 0.5 || hi_y > size - 0.5)
    clipped = true;
  for (int64_t y = 0; y < size; ++y) {
    for (int64_t x = 0; x < size; ++x) {
      const double dx = static_cast<double>(x) - cx;
      const double dy = static_cast<double>(y) - cy;
      bool inside = false;
      switch (kind) {
        case ShapeKind::square:
          inside = std::abs(dx) <= rx && std::abs(dy) <= ry;
          break;
        case ShapeKind::ellipse: {
          const double ey = 0.6 * ry;
          inside = (dx * dx) / (rx * rx) + (dy * dy) / (ey * ey) <= 1.0;
          break;
        }
        case ShapeKind::triangle: {
          // Upward isoceles triangle: apex at cy - ry, base at cy + ry.
          const double t = (dy + ry) / (2.0 * ry);  // 0 at apex, 1 at base
          inside = dy >= -ry && dy <= ry && std::abs(dx) <= t * rx;
          break;
        }
      }
      if (inside) img[y * size + x] = 1.0f;
    }
  }
  return clipped;
}

}  // namespace

FactorDataset generate_synthetic(const SyntheticGrid& grid, int64_t image_size,
                                 uint64_t seed) {
  CFASL_CHECK_ARG(image_size == 16 || image_size == 32 || image_size == 64,
                  "generate_synthetic: image_size must be 16, 32 or 64");
  CFASL_CHECK_ARG(grid.positions_x >= 1 && grid.positions_y >= 1 && grid.scales >= 1 &&
                      !grid.shapes.empty(),
                  "generate_synthetic: every axis needs at least one value");

  const int64_t px = grid.positions_x, py = grid.positions_y, sc = grid.scales;
  const int64_t sh = static_cast<int64_t>(grid.shapes.size());

  FactorDataset ds;
  ds.seed = seed;
  ds.channels = 1;
  ds.height = image_size;
  ds.width = image_size;
  ds.n = px * py * sc * sh;
  ds.exhaustive = true;
  ds.canonical = true;

  // Axes with a single value are rendered but carry no factor label.
  struct Axis {
    std::string name;
    int64_t size;
  };
  std::vector<Axis> axes;
  if (px > 1) axes.push_back({"pos_x", px});
  if (py > 1) axes.push_back({"pos_y", py});
  if (sc > 1) axes.push_back({"scale", sc});
  if (sh > 1) axes.push_back({"shape", sh});
  CFASL_CHECK_ARG(!axes.empty(), "generate_synthetic: at least one axis must vary");
  for (const auto& a : axes) {
    ds.factor_names.push_back(a.name);
    ds.factor_sizes.push_back(a.size);
  }

  ds.images.assign(static_cast<size_t>(ds.n * image_size * image_size), 0.0f);
  ds.factors.reserve(static_cast<size_t>(ds.n * ds.num_factors()));

  // Geometry: positions on an even grid, extents growing with scale.
  const double step_x = static_cast<double>(image_size) / static_cast<double>(px);
  const double step_y = static_cast<double>(image_size) / static_cast<double>(py);
  const double base_extent = static_cast<double>(image_size) / 5.0;
  const double extent_step = sc > 1 ? base_extent / static_cast<double>(sc) : 0.0;

  int64_t row = 0;
  for (int64_t ix = 0; ix < px; ++ix)
    for (int64_t iy = 0; iy < py; ++iy)
      for (int64_t is = 0; is < sc; ++is)
        for (int64_t ih = 0; ih < sh; ++ih, ++row) {
          const double cx = (static_cast<double>(ix) + 0.5) * step_x - 0.5;
          const double cy = (static_cast<double>(iy) + 0.5) * step_y - 0.5;
          const double extent = base_extent + extent_step * static_cast<double>(is);
          float* img = ds.images.data() + row * image_size * image_size;
          if (render_shape(img, image_size, grid.shapes[static_cast<size_t>(ih)], cx, cy,
                           extent))
            ++ds.clamp_warnings;
          if (px > 1) ds.factors.push_back(ix);
          if (py > 1) ds.factors.push_back(iy);
          if (sc > 1) ds.factors.push_back(is);
          if (sh > 1) ds.factors.push_back(ih);
        }
  ds.validate();
  return ds;
}

FactorDataset load_dsprites(const std::string& path) {
  auto arrays = read_npz(path);
  if (arrays.find("imgs") == arrays.end() ||
      arrays.find("latents_classes") == arrays.end())
    throw_io("corrupt archive: required keys 'imgs' and 'latents_classes' missing");
  const NpyArray& imgs = arrays.at("imgs");
  const NpyArray& latents = arrays.at("latents_classes");
  if (imgs.shape.size() < 3) throw_io("corrupt archive: imgs must be at least 3-D");
  const int64_t n = imgs.shape[0];
  if (latents.shape.size() != 2 || latents.shape[0] != n)
    throw_io("corrupt archive: latents_classes count does not match imgs");

  FactorDataset ds;
  ds.n = n;
  if (imgs.shape.size() == 3) {
    ds.channels = 1;
    ds.height = imgs.shape[1];
    ds.width = imgs.shape[2];
  } else if (imgs.shape.size() == 4) {
    ds.channels = imgs.shape[1];
    ds.height = imgs.shape[2];
    ds.width = imgs.shape[3];
  } else {
    throw_io("corrupt archive: imgs rank not supported");
  }

  std::vector<double> pixels = imgs.as_doubles();
  double maxv = 0;
  for (double v : pixels) maxv = std::max(maxv, v);
  const double scale = maxv > 1.0 ? 1.0 / 255.0 : 1.0;
  ds.images.resize(pixels.size());
  for (size_t i = 0; i < pixels.size(); ++i)
    ds.images[i] = static_cast<float>(pixels[i] * scale);

  std::vector<int64_t> raw = latents.as_int64s();
  const int64_t fall = latents.shape[1];
  std::vector<int64_t> sizes(static_cast<size_t>(fall), 0);
  for (int64_t r = 0; r < n; ++r)
    for (int64_t f = 0; f < fall; ++f)
      sizes[static_cast<size_t>(f)] =
          std::max(sizes[static_cast<size_t>(f)], raw[r * fall + f] + 1);

  std::vector<int64_t> keep;
  for (int64_t f = 0; f < fall; ++f)
    if (sizes[static_cast<size_t>(f)] > 1) keep.push_back(f);
  if (keep.empty()) throw_io("corrupt archive: no varying factor columns");

  for (int64_t f : keep) ds.factor_sizes.push_back(sizes[static_cast<size_t>(f)]);
  ds.factors.reserve(static_cast<size_t>(n) * keep.size());
  for (int64_t r = 0; r < n; ++r)
    for (int64_t f : keep) ds.factors.push_back(raw[r * fall + f]);

  // The official archive: shape(3), scale(6), orientation(40), x(32), y(32).
  const std::vector<int64_t> official{3, 6, 40, 32, 32};
  if (ds.factor_sizes == official) {
    ds.factor_names = {"shape", "scale", "orientation", "pos_x", "pos_y"};
  } else {
    for (size_t f = 0; f < ds.factor_sizes.size(); ++f)
      ds.factor_names.push_back("factor_" + std::to_string(f));
  }

  int64_t product = 1;
  for (int64_t s : ds.factor_sizes) product *= s;
  if (product != n)
    throw_io("corrupt archive: row count " + std::to_string(n) +
             " does not cover the factor product " + std::to_string(product));
  ds.exhaustive = true;

  // Canonical iff rows follow mixed-radix order over the kept columns.
  ds.canonical = true;
  for (int64_t r = 0; r < n && ds.canonical; ++r) {
    int64_t idx = 0;
    for (int64_t f = 0; f < ds.num_factors(); ++f)
      idx = idx * ds.factor_sizes[static_cast<size_t>(f)] + ds.factor(r, f);
    if (idx != r) ds.canonical = false;
  }
  ds.validate();
  return ds;
}

FactorDataset subsample(const FactorDataset& ds, double fraction, uint64_t seed) {
  CFASL_CHECK_ARG(fraction > 0 && fraction <= 1.0,
                  "subsample: fraction must be in (0, 1]");
  Rng rng(seed);
  int64_t k = std::max<int64_t>(1, static_cast<int64_t>(std::llround(fraction * ds.n)));
  std::vector<int64_t> rows = rng.sample_without_replacement(ds.n, k);
  std::sort(rows.begin(), rows.end());

  FactorDataset out;
  out.channels = ds.channels;
  out.height = ds.height;
  out.width = ds.width;
  out.factor_sizes = ds.factor_sizes;
  out.factor_names = ds.factor_names;
  out.n = k;
  out.exhaustive = false;
  out.canonical = false;
  out.seed = seed;
  const int64_t px = ds.pixels_per_image();
  out.images.resize(static_cast<size_t>(k * px));
  out.factors.resize(static_cast<size_t>(k * ds.num_factors()));
  for (int64_t i = 0; i < k; ++i) {
    std::copy(ds.images.begin() + rows[static_cast<size_t>(i)] * px,
              ds.images.begin() + (rows[static_cast<size_t>(i)] + 1) * px,
              out.images.begin() + i * px);
    for (int64_t f = 0; f < ds.num_factors(); ++f)
      out.factors[static_cast<size_t>(i * ds.num_factors() + f)] =
          ds.factor(rows[static_cast<size_t>(i)], f);
  }
  return out;
}

void FactorQuery::validate(const FactorDataset& ds) const {
  CFASL_CHECK_ARG(fixed_factors.size() == fixed_values.size(),
                  "FactorQuery: index/value count mismatch");
  std::vector<bool> seen(static_cast<size_t>(ds.num_factors()), false);
  for (size_t i = 0; i < fixed_factors.size(); ++i) {
    int64_t f = fixed_factors[i];
    CFASL_CHECK_ARG(f >= 0 && f < ds.num_factors(), "FactorQuery: factor index out of range");
    CFASL_CHECK_ARG(!seen[static_cast<size_t>(f)], "FactorQuery: duplicate factor index");
    seen[static_cast<size_t>(f)] = true;
    CFASL_CHECK_ARG(fixed_values[i] >= 0 &&
                        fixed_values[i] < ds.factor_sizes[static_cast<size_t>(f)],
                    "FactorQuery: fixed value out of range");
  }
}

std::vector<int64_t> sample_with_fixed_factors(const FactorDataset& ds,
                                               const FactorQuery& query, int64_t count,
                                               Rng& rng) {
  query.validate(ds);
  CFASL_CHECK_ARG(count >= 1, "sample_with_fixed_factors: n must be >= 1");
  const int64_t f_total = ds.num_factors();
  std::vector<int64_t> fixed_value_of(static_cast<size_t>(f_total), -1);
  for (size_t i = 0; i < query.fixed_factors.size(); ++i)
    fixed_value_of[static_cast<size_t>(query.fixed_factors[i])] = query.fixed_values[i];

  std::vector<int64_t> out;
  out.reserve(static_cast<size_t>(count));
  if (ds.canonical) {
    std::vector<int64_t> values(static_cast<size_t>(f_total));
    for (int64_t i = 0; i < count; ++i) {
      for (int64_t f = 0; f < f_total; ++f)
        values[static_cast<size_t>(f)] =
            fixed_value_of[static_cast<size_t>(f)] >= 0
                ? fixed_value_of[static_cast<size_t>(f)]
                : rng.below(ds.factor_sizes[static_cast<size_t>(f)]);
      out.push_back(ds.rank_of(values));
    }
    return out;
  }

  std::vector<int64_t> matches;
  for (int64_t r = 0; r < ds.n; ++r) {
    bool ok = true;
    for (int64_t f = 0; f < f_total && ok; ++f)
      if (fixed_value_of[static_cast<size_t>(f)] >= 0 &&
          ds.factor(r, f) != fixed_value_of[static_cast<size_t>(f)])
        ok = false;
    if (ok) matches.push_back(r);
  }
  CFASL_CHECK_ARG(!matches.empty(),
                  "sample_with_fixed_factors: no rows match the query");
  for (int64_t i = 0; i < count; ++i)
    out.push_back(matches[static_cast<size_t>(rng.below(
        static_cast<int64_t>(matches.size())))]);
  return out;
}

// ---------------------------------------------------------------------------
// Disk format
// ---------------------------------------------------------------------------

void save_dataset(const FactorDataset& ds, const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  json manifest;
  manifest["n"] = ds.n;
  manifest["channels"] = ds.channels;
  manifest["height"] = ds.height;
  manifest["width"] = ds.width;
  manifest["factor_names"] = ds.factor_names;
  manifest["factor_sizes"] = ds.factor_sizes;
  manifest["exhaustive"] = ds.exhaustive;
  manifest["canonical"] = ds.canonical;
  manifest["seed"] = ds.seed;
  manifest["clamp_warnings"] = ds.clamp_warnings;
  manifest["images_file"] = "images.f32";
  manifest["factors_file"] = "factors.i32";
  {
    std::ofstream f(fs::path(dir) / "manifest.json");
    if (!f) throw_io("cannot write manifest in " + dir);
    f << manifest.dump(2) << "\n";
  }
  {
    std::ofstream f(fs::path(dir) / "images.f32", std::ios::binary);
    if (!f) throw_io("cannot write images.f32 in " + dir);
    f.write(reinterpret_cast<const char*>(ds.images.data()),
            static_cast<std::streamsize>(ds.images.size() * sizeof(float)));
  }
  {
    std::vector<int32_t> fac(ds.factors.size());
    for (size_t i = 0; i < fac.size(); ++i) fac[i] = static_cast<int32_t>(ds.factors[i]);
    std::ofstream f(fs::path(dir) / "factors.i32", std::ios::binary);
    if (!f) throw_io("cannot write factors.i32 in " + dir);
    f.write(reinterpret_cast<const char*>(fac.data()),
            static_cast<std::streamsize>(fac.size() * sizeof(int32_t)));
  }
}

FactorDataset load_dataset_dir(const std::string& dir) {
  std::ifstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw_io("no manifest.json in " + dir);
  json manifest;
  try {
    mf >> manifest;
  } catch (const json::exception& e) {
    throw_io("invalid manifest.json in " + dir + ": " + e.what());
  }
  FactorDataset ds;
  try {
    ds.n = manifest.at("n").get<int64_t>();
    ds.channels = manifest.at("channels").get<int64_t>();
    ds.height = manifest.at("height").get<int64_t>();
    ds.width = manifest.at("width").get<int64_t>();
    ds.factor_names = manifest.at("factor_names").get<std::vector<std::string>>();
    ds.factor_sizes = manifest.at("factor_sizes").get<std::vector<int64_t>>();
    ds.exhaustive = manifest.value("exhaustive", false);
    ds.canonical = manifest.value("canonical", false);
    ds.seed = manifest.value("seed", 0ULL);
    ds.clamp_warnings = manifest.value("clamp_warnings", 0);
  } catch (const json::exception& e) {
    throw_io("manifest.json missing fields in " + dir + ": " + e.what());
  }
  {
    std::ifstream f(fs::path(dir) / manifest.value("images_file", "images.f32"),
                    std::ios::binary);
    if (!f) throw_io("missing images.f32 in " + dir);
    ds.images.resize(static_cast<size_t>(ds.n * ds.pixels_per_image()));
    f.read(reinterpret_cast<char*>(ds.images.data()),
           static_cast<std::streamsize>(ds.images.size() * sizeof(float)));
    if (f.gcount() != static_cast<std::streamsize>(ds.images.size() * sizeof(float)))
      throw_io("images.f32 truncated in " + dir);
  }
  {
    std::ifstream f(fs::path(dir) / manifest.value("factors_file", "factors.i32"),
                    std::ios::binary);
    if (!f) throw_io("missing factors.i32 in " + dir);
    std::vector<int32_t> fac(static_cast<size_t>(ds.n * ds.num_factors()));
    f.read(reinterpret_cast<char*>(fac.data()),
           static_cast<std::streamsize>(fac.size() * sizeof(int32_t)));
    if (f.gcount() != static_cast<std::streamsize>(fac.size() * sizeof(int32_t)))
      throw_io("factors.i32 truncated in " + dir);
    ds.factors.assign(fac.begin(), fac.end());
  }
  ds.validate();
  return ds;
}

FactorDataset open_dataset(const std::string& path) {
  if (path.size() > 4 && path.substr(path.size() - 4) == ".npz")
    return load_dsprites(path);
  if (fs::is_directory(path)) return load_dataset_dir(path);
  throw_io("dataset path is neither an .npz archive nor a dataset directory: " + path);
}

}  // namespace cfasl
