#include "nn.hpp"

#include <cmath>

namespace cfasl {

int64_t ParamStore::add(std::string name, Tensor init) {
  CFASL_CHECK_ARG(index_of(name) < 0, "duplicate parameter name: " + name);
  Entry e;
  e.name = std::move(name);
  e.m = Tensor(init.shape());
  e.v = Tensor(init.shape());
  e.value = std::move(init);
  entries_.push_back(std::move(e));
  return static_cast<int64_t>(entries_.size() - 1);
}

int64_t ParamStore::index_of(const std::string& name) const {
  for (size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].name == name) return static_cast<int64_t>(i);
  return -1;
}

int64_t ParamStore::total_parameters() const {
  int64_t n = 0;
  for (const auto& e : entries_) n += e.value.numel();
  return n;
}

std::vector<Var> stage_params(Graph& g, const ParamStore& store) {
  std::vector<Var> vars;
  vars.reserve(static_cast<size_t>(store.size()));
  for (int64_t i = 0; i < store.size(); ++i) vars.push_back(g.leaf(store.value(i)));
  return vars;
}

void Adam::step(ParamStore& store, const std::vector<Tensor>& grads) {
  CFASL_CHECK_ARG(static_cast<int64_t>(grads.size()) == store.size(),
                  "Adam::step: gradient count mismatch");
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (int64_t i = 0; i < store.size(); ++i) {
    auto& e = store.entry(i);
    const Tensor& grad = grads[static_cast<size_t>(i)];
    CFASL_CHECK_ARG(grad.same_shape(e.value), "Adam::step: gradient shape mismatch");
    for (int64_t j = 0; j < e.value.numel(); ++j) {
      double gj = grad[j];
      e.m[j] = beta1_ * e.m[j] + (1.0 - beta1_) * gj;
      e.v[j] = beta2_ * e.v[j] + (1.0 - beta2_) * gj * gj;
      double mhat = e.m[j] / bc1;
      double vhat = e.v[j] / bc2;
      e.value[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

Tensor he_normal(std::vector<int64_t> shape, int64_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, stddev);
  return t;
}

Conv2dLayer Conv2dLayer::create(ParamStore& store, const std::string& name, int cin,
                                int cout, int k, int stride, int pad, Rng& rng) {
  Conv2dLayer l;
  l.cin = cin;
  l.cout = cout;
  l.k = k;
  l.stride = stride;
  l.pad = pad;
  int64_t fan_in = static_cast<int64_t>(cin) * k * k;
  l.w = store.add(name + ".w", he_normal({cout, fan_in}, fan_in, rng));
  l.b = store.add(name + ".b", Tensor({cout}));
  return l;
}

Var Conv2dLayer::forward(const std::vector<Var>& params, Var x) const {
  Var y = conv2d(x, params[static_cast<size_t>(w)], k, k, stride, pad);
  return add_channel_bias(y, params[static_cast<size_t>(b)]);
}

ConvTranspose2dLayer ConvTranspose2dLayer::create(ParamStore& store,
                                                  const std::string& name, int cin,
                                                  int cout, int k, int stride, int pad,
                                                  Rng& rng) {
  ConvTranspose2dLayer l;
  l.cin = cin;
  l.cout = cout;
  l.k = k;
  l.stride = stride;
  l.pad = pad;
  int64_t fan_in = static_cast<int64_t>(cin) * k * k;
  l.w = store.add(name + ".w", he_normal({cin, static_cast<int64_t>(cout) * k * k}, fan_in, rng));
  l.b = store.add(name + ".b", Tensor({cout}));
  return l;
}

Var ConvTranspose2dLayer::forward(const std::vector<Var>& params, Var x) const {
  Var y = conv2d_transpose(x, params[static_cast<size_t>(w)], k, k, stride, pad);
  return add_channel_bias(y, params[static_cast<size_t>(b)]);
}

LinearLayer LinearLayer::create(ParamStore& store, const std::string& name, int in,
                                int out, Rng& rng) {
  LinearLayer l;
  l.in = in;
  l.out = out;
  l.w = store.add(name + ".w", he_normal({in, out}, in, rng));
  l.b = store.add(name + ".b", Tensor({out}));
  return l;
}

Var LinearLayer::forward(const std::vector<Var>& params, Var x) const {
  return add_rowvec(matmul(x, params[static_cast<size_t>(w)]),
                    params[static_cast<size_t>(b)]);
}

}  // namespace cfasl
