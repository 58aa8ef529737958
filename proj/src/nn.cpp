#include "gpat/nn.hpp"

#include <cmath>

namespace gpat::nn {

void add_linear(ag::ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
                std::mt19937_64& rng, bool bias, double gain) {
  const double bound = gain * std::sqrt(6.0 / static_cast<double>(in + out));
  store.add_uniform(name + ".weight", {in, out}, bound, rng);
  if (bias) store.add(name + ".bias", {out}, std::vector<double>(out, 0.0));
}

ag::Tensor linear(const ag::ParameterStore& store, const std::string& name, const ag::Tensor& x) {
  ag::Tensor y = ag::matmul(x.rank() == 1 ? ag::reshape(x, {1, x.dim(0)}) : x, store.get(name + ".weight"));
  if (x.rank() == 1) y = ag::reshape(y, {y.dim(1)});
  const std::string bias = name + ".bias";
  if (store.contains(bias)) y = ag::add(y, store.get(bias));
  return y;
}

void add_mlp(ag::ParameterStore& store, const std::string& prefix, const std::vector<std::size_t>& dims,
             std::mt19937_64& rng, double final_gain) {
  for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
    const bool last = k + 2 == dims.size();
    const std::string name = prefix + ".l" + std::to_string(k);
    if (last) {
      add_linear(store, name, dims[k], dims[k + 1], rng, true, final_gain);
    } else {
      // feeds a ReLU: He-uniform on fan-in
      const double bound = std::sqrt(6.0 / static_cast<double>(dims[k]));
      store.add_uniform(name + ".weight", {dims[k], dims[k + 1]}, bound, rng);
      store.add(name + ".bias", {dims[k + 1]}, std::vector<double>(dims[k + 1], 0.0));
    }
  }
}

ag::Tensor mlp(const ag::ParameterStore& store, const std::string& prefix, const ag::Tensor& x) {
  ag::Tensor h = x;
  for (std::size_t k = 0;; ++k) {
    const std::string name = prefix + ".l" + std::to_string(k);
    if (!store.contains(name + ".weight")) break;
    if (k > 0) h = ag::relu(h);
    h = linear(store, name, h);
  }
  return h;
}

}  // namespace gpat::nn
