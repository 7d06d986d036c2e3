#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "waferscope/sparse_tensor.hpp"

namespace waferscope {

// Submanifold sparse convolution. Weights are laid out [k*k][in][out] using
// the rulebook offset index, so y[u][o] = b[o] + sum_{delta,c} W[delta][c][o] * x[u+delta][c]
// evaluated only at active sites u.
struct SscLayer {
  int kernel_size = 3;
  int in_channels = 1;
  int out_channels = 1;
  std::vector<double> weights;
  std::vector<double> bias;

  static SscLayer zeros(int kernel_size, int in_channels, int out_channels);

  std::size_t kernel_volume() const { return static_cast<std::size_t>(kernel_size) * kernel_size; }
  std::size_t parameter_count() const { return weights.size() + bias.size(); }
  double& weight(std::size_t offset, int in, int out) {
    return weights[(offset * in_channels + in) * out_channels + out];
  }
  double weight(std::size_t offset, int in, int out) const {
    return weights[(offset * in_channels + in) * out_channels + out];
  }
};

struct SscCache {
  SparseTensor input;
  RuleBookPtr rulebook;
};

std::pair<SparseTensor, SscCache> ssc_forward(const SscLayer& layer, const SparseTensor& x, const RuleBookPtr& rb);

struct SscGradients {
  SparseTensor grad_input;
  std::vector<double> grad_weights;
  std::vector<double> grad_bias;
};

SscGradients ssc_backward(const SscLayer& layer, const SscCache& cache, const SparseTensor& grad_out);

enum class NormMode { Train, Eval };

// Batch normalization with statistics pooled over every active site of every
// tensor in the batch.
struct BatchNorm {
  int channels = 1;
  std::vector<double> gamma;
  std::vector<double> beta;
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double eps = 1e-5;
  double momentum = 0.1;
  NormMode mode = NormMode::Train;

  explicit BatchNorm(int channels = 1);
  std::size_t parameter_count() const { return gamma.size() + beta.size(); }
};

struct BatchNormCache {
  NormMode mode = NormMode::Train;
  std::vector<SparseTensor> normalized;  // x_hat
  std::vector<double> inv_std;
  std::vector<double> batch_mean;
  std::vector<double> batch_var;  // biased
  std::size_t count = 0;          // active sites over the batch
};

// Pure: running statistics are not touched. Train-mode callers commit the
// batch statistics with commit_running_stats.
std::pair<std::vector<SparseTensor>, BatchNormCache> batchnorm_forward(const BatchNorm& bn,
                                                                        std::span<const SparseTensor> batch);
void commit_running_stats(BatchNorm& bn, const BatchNormCache& cache);

struct BatchNormGradients {
  std::vector<SparseTensor> grad_input;
  std::vector<double> grad_gamma;
  std::vector<double> grad_beta;
};

BatchNormGradients batchnorm_backward(const BatchNorm& bn, const BatchNormCache& cache,
                                      std::span<const SparseTensor> grad_out);

struct ReluCache {
  SparseTensor input;
};

std::pair<SparseTensor, ReluCache> relu_forward(const SparseTensor& x);
SparseTensor relu_backward(const ReluCache& cache, const SparseTensor& grad_out);

// Stride-2 max pooling driven by a Pool2 rulebook. argmax[out * C + c] is the
// winning input row; ties go to the first rule, i.e. the smallest coordinate.
struct PoolCache {
  SparseTensor input;
  RuleBookPtr rulebook;
  std::vector<std::uint32_t> argmax;
};

std::pair<SparseTensor, PoolCache> maxpool2_forward(const SparseTensor& x, const RuleBookPtr& rb);
SparseTensor maxpool2_backward(const PoolCache& cache, const SparseTensor& grad_out);

// Max-shifted softmax. Throws ContractError on non-finite input.
std::vector<double> softmax(std::span<const double> v);

}  // namespace waferscope
