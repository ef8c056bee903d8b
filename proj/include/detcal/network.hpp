#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "detcal/features.hpp"

namespace detcal {

struct TrainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class ArchVariant { kSetCnn, kMlp };
enum class PoolMode { kMasked, kLiteral };

/// Shapes and switches of a calibration network. The defaults are the
/// full-scale model: pointwise conv stack 256/512/1024/2048 over 357
/// features, masked global max-pool, one hidden classifier layer.
struct Architecture {
  ArchVariant variant = ArchVariant::kSetCnn;
  int input_features = kFeatureDim;
  int max_rows = kMaxSupportRows;
  int num_classes = kNumClasses;
  std::vector<int> feature_widths = {256, 512, 1024, 2048};
  std::vector<int> classifier_hidden = {1024};
  int embedding_dim = 0;  // E; classifier input grows by 2E when > 0
  PoolMode pool = PoolMode::kMasked;

  /// The mlp ablation: 3 dense layers of 2048 over the flattened input.
  static Architecture mlp(int input_features = kFeatureDim, int max_rows = kMaxSupportRows,
                          int num_classes = kNumClasses);

  int feature_input_width() const {
    return variant == ArchVariant::kMlp ? max_rows * input_features : input_features;
  }
  int classifier_input_width() const {
    return feature_widths.back() + 2 * embedding_dim;
  }
  bool operator==(const Architecture&) const = default;
};

struct DenseLayer {
  Eigen::MatrixXd weights;  // out x in
  Eigen::VectorXd bias;     // out
};

struct ModelParameters {
  Architecture arch;
  std::vector<DenseLayer> feature_layers;
  std::vector<DenseLayer> classifier;  // hidden layers then the logit layer

  std::size_t parameter_count() const;
};

/// Weights uniform in (-sqrt(3/fan_in), sqrt(3/fan_in)), biases zero.
ModelParameters init_parameters(const Architecture& arch, std::uint64_t seed);

/// Compact view of a feature matrix: only the valid rows are stored.
struct RowSet {
  Eigen::MatrixXd rows;  // valid_rows x input_features
  int padded_rows = kMaxSupportRows;  // logical M including zero padding

  int valid_rows() const { return static_cast<int>(rows.rows()); }
};

RowSet to_rowset(const FeatureMatrix& m);

struct ForwardResult {
  Eigen::VectorXd logits;
  Eigen::VectorXd probs;
};

ForwardResult forward(const ModelParameters& params, const RowSet& input,
                      const ImageEmbedding* embedding = nullptr);

/// Parameter-shaped gradient accumulator. The first feature layer's
/// weight gradient is stored only up to the widest input column actually
/// touched, which keeps the mlp variant's sparse flattened input cheap.
struct Gradients {
  explicit Gradients(const Architecture& arch);

  std::vector<DenseLayer> feature_layers;
  std::vector<DenseLayer> classifier;
  int first_layer_cols = 0;  // used columns of feature_layers[0].weights

  void accumulate(const Gradients& other);
  void ensure_first_layer_cols(int cols);
};

/// Cross-entropy loss and exact analytic gradients, accumulated into
/// `grads`. Max-pool routes gradient to the first maximal row.
double backward(const ModelParameters& params, const RowSet& input,
                const ImageEmbedding* embedding, int truth_label, Gradients& grads);

enum class LrSchedule { kConstant, kStepDecay };

struct TrainConfig {
  double learning_rate = 0.01;
  int epochs = 10;
  int batch_size = 32;
  std::uint64_t seed = 0;
  double momentum = 0.0;
  LrSchedule schedule = LrSchedule::kConstant;
  int step_every = 0;       // epochs between decays (kStepDecay)
  double step_gamma = 0.1;
};

struct TrainExample {
  RowSet rows;
  std::optional<ImageEmbedding> embedding;
  int truth_label = 0;
};

struct TrainResult {
  ModelParameters params;
  std::vector<double> epoch_losses;  // mean loss per epoch
};

/// Minibatch SGD. Deterministic given the seed: shuffling, batch order
/// and gradient reduction order are all fixed. Throws TrainError when a
/// batch produces a non-finite loss.
TrainResult train(ModelParameters params, const std::vector<TrainExample>& data,
                  const TrainConfig& config);

}  // namespace detcal
