#pragma once

#include <random>
#include <string>
#include <vector>

#include "gpat/autograd.hpp"
#include "gpat/params.hpp"

namespace gpat::nn {

// Parameters live under "<prefix>.l<k>.weight" ([in, out]) and
// "<prefix>.l<k>.bias" ([out]).

void add_linear(ag::ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
                std::mt19937_64& rng, bool bias = true, double gain = 1.0);
ag::Tensor linear(const ag::ParameterStore& store, const std::string& name, const ag::Tensor& x);

/// dims = {in, hidden..., out}; ReLU between layers, none after the last.
/// `final_gain` scales the init bound of the last layer.
void add_mlp(ag::ParameterStore& store, const std::string& prefix, const std::vector<std::size_t>& dims,
             std::mt19937_64& rng, double final_gain = 1.0);
ag::Tensor mlp(const ag::ParameterStore& store, const std::string& prefix, const ag::Tensor& x);

}  // namespace gpat::nn
