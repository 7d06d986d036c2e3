#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "waferscope/layers.hpp"
#include "waferscope/sparse_tensor.hpp"

namespace waferscope {

struct SscnConfig {
  int num_blocks = 5;
  std::vector<int> block_channels{8, 16, 16, 32, 32};
  int kernel_size = 3;
  std::vector<int> kernel_sizes;  // per block; empty means kernel_size everywhere
  int input_channels = 1;
  int latent_dim = 32;
  int num_classes = 2;
  int grid_size = 512;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;
  std::uint64_t seed = 0;

  void validate() const;  // throws ConfigError
  int kernel_for(int block) const;
  // Spatial extent of the activation grid after every block has pooled.
  int residual_extent() const;

  // 13 blocks, 128-d latent, K = 20,000. Channel widths are not published;
  // these are this project's choice.
  static SscnConfig full_scale(int num_classes);
};

// Fully connected map, weights laid out [in][out].
struct DenseLayer {
  int in_features = 0;
  int out_features = 0;
  std::vector<double> weights;
  std::vector<double> bias;

  std::size_t parameter_count() const { return weights.size() + bias.size(); }
};

// Blocks of SSC -> BN -> ReLU -> 2x2 max pool, then a convolution whose
// kernel spans the whole residual grid (a dense map from the residual cells,
// zeros at inactive cells, to the latent vector), then the FC class head.
struct Sscn {
  SscnConfig config;
  std::vector<SscLayer> convs;
  std::vector<BatchNorm> norms;
  DenseLayer latent_conv;
  DenseLayer fc;

  std::size_t parameter_count() const;
  void set_mode(NormMode mode);
};

Sscn build_network(const SscnConfig& cfg, std::uint64_t seed);

struct ForwardOutput {
  std::vector<double> latent;
  std::vector<double> scores;  // pre-softmax class scores v
};

// Support after every stage, for structural checks.
struct ForwardTrace {
  struct Stage {
    std::string name;
    int grid_size = 0;
    SupportPtr support;
  };
  std::vector<Stage> stages;
};

// Single-sample forward. Eval mode uses BN running statistics; train mode
// treats the sample as a batch of one.
ForwardOutput forward(const Sscn& model, const SparseTensor& w, NormMode mode = NormMode::Eval,
                      ForwardTrace* trace = nullptr);
std::vector<ForwardOutput> forward_batch(const Sscn& model, std::span<const SparseTensor> batch, NormMode mode);

// Visits trainable parameters in checkpoint / gradient order.
void for_each_parameter(Sscn& model, const std::function<void(const std::string&, std::span<double>)>& fn);
void for_each_parameter(const Sscn& model, const std::function<void(const std::string&, std::span<const double>)>& fn);

struct ParameterGroup {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
};
std::vector<ParameterGroup> parameter_layout(const Sscn& model);
std::vector<double> flatten_parameters(const Sscn& model);
void assign_parameters(Sscn& model, std::span<const double> flat);

struct LossAndGrads {
  double loss = 0.0;
  std::vector<double> grads;             // flat, parameter_layout order
  std::vector<BatchNormCache> bn_stats;  // per block, tensors stripped
  std::size_t correct = 0;
};

// Mean cross-entropy over the batch with BN in the requested mode; the model
// is not modified.
LossAndGrads loss_and_grads(const Sscn& model, std::span<const SparseTensor> inputs, std::span<const int> labels,
                            NormMode mode = NormMode::Train);

struct TrainConfig {
  double learning_rate = 2e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 16;
  int epochs = 30;
  std::uint64_t seed = 0;

  void validate() const;  // throws ConfigError
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long step = 0;
};

// Bias-corrected Adam. An empty state is sized on first use.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, const TrainConfig& cfg);

}  // namespace waferscope
