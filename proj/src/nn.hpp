#pragma once

#include <string>
#include <vector>

#include "graph.hpp"
#include "rng.hpp"

namespace cfasl {

/// Named trainable tensors plus their Adam moment buffers.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    Tensor m;  // first moment
    Tensor v;  // second moment
  };

  int64_t add(std::string name, Tensor init);
  int64_t size() const { return static_cast<int64_t>(entries_.size()); }
  Entry& entry(int64_t i) { return entries_[static_cast<size_t>(i)]; }
  const Entry& entry(int64_t i) const { return entries_[static_cast<size_t>(i)]; }
  Tensor& value(int64_t i) { return entries_[static_cast<size_t>(i)].value; }
  const Tensor& value(int64_t i) const { return entries_[static_cast<size_t>(i)].value; }
  int64_t index_of(const std::string& name) const;  // -1 when absent
  int64_t total_parameters() const;

 private:
  std::vector<Entry> entries_;
};

/// Creates one leaf per parameter on the graph, in store order.
std::vector<Var> stage_params(Graph& g, const ParamStore& store);

/// Adam with the default moment coefficients; only the learning rate is
/// configurable.
class Adam {
 public:
  explicit Adam(double lr) : lr_(lr) {}

  void step(ParamStore& store, const std::vector<Tensor>& grads);
  int64_t steps_taken() const { return t_; }
  void set_steps_taken(int64_t t) { t_ = t; }
  double learning_rate() const { return lr_; }

 private:
  double lr_;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  int64_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Layers: thin structs holding parameter indices into a ParamStore.
// ---------------------------------------------------------------------------

struct Conv2dLayer {
  int64_t w = -1, b = -1;
  int cin = 0, cout = 0, k = 0, stride = 1, pad = 0;

  static Conv2dLayer create(ParamStore& store, const std::string& name, int cin,
                            int cout, int k, int stride, int pad, Rng& rng);
  Var forward(const std::vector<Var>& params, Var x) const;
};

struct ConvTranspose2dLayer {
  int64_t w = -1, b = -1;
  int cin = 0, cout = 0, k = 0, stride = 1, pad = 0;

  static ConvTranspose2dLayer create(ParamStore& store, const std::string& name,
                                     int cin, int cout, int k, int stride, int pad,
                                     Rng& rng);
  Var forward(const std::vector<Var>& params, Var x) const;
};

struct LinearLayer {
  int64_t w = -1, b = -1;
  int in = 0, out = 0;

  static LinearLayer create(ParamStore& store, const std::string& name, int in,
                            int out, Rng& rng);
  Var forward(const std::vector<Var>& params, Var x) const;
};

/// He-normal initialization used by all layers.
Tensor he_normal(std::vector<int64_t> shape, int64_t fan_in, Rng& rng);

}  // namespace cfasl
