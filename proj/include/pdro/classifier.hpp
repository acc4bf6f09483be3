#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pdro/image.hpp"
#include "pdro/rng.hpp"

namespace pdro {

/// mlp:     n -> 128 (tanh) -> C
/// convnet: 5x5 convolution with 8 channels (tanh), 2x2 max-pool, dense -> C
enum class Architecture { mlp, convnet };

std::string to_string(Architecture arch);
Architecture parse_architecture(const std::string& name);

inline constexpr std::size_t kMlpHidden = 128;
inline constexpr std::size_t kConvChannels = 8;
inline constexpr std::size_t kConvKernel = 5;

/// Offsets of each parameter block inside the flat parameter vector.
struct ParamLayout {
    // mlp: w1 [hidden x n], b1 [hidden], w2 [C x hidden], b2 [C]
    // convnet: w1 = kernels [channels x 25], b1 [channels], w2 [C x pooled], b2 [C]
    std::size_t w1 = 0, b1 = 0, w2 = 0, b2 = 0, total = 0;
    std::size_t hidden = 0;   // mlp hidden width or convnet pooled feature count
    std::size_t conv_rows = 0, conv_cols = 0, pool_rows = 0, pool_cols = 0;
};

/// Classifier parameters theta with their architecture. Immutable in use; training
/// returns new values.
class Model {
public:
    Model(Architecture arch, std::size_t height, std::size_t width, int class_count,
          std::vector<double> params);

    /// All parameters zero.
    static Model zeros(Architecture arch, std::size_t height, std::size_t width, int class_count);

    /// Weights and biases uniform in +-1/sqrt(fan_in).
    static Model random(Architecture arch, std::size_t height, std::size_t width, int class_count,
                        Rng& rng);

    static ParamLayout layout(Architecture arch, std::size_t height, std::size_t width,
                              int class_count);

    Architecture architecture() const noexcept { return arch_; }
    std::size_t input_height() const noexcept { return height_; }
    std::size_t input_width() const noexcept { return width_; }
    int class_count() const noexcept { return classes_; }
    const ParamLayout& layout() const noexcept { return layout_; }
    const std::vector<double>& params() const noexcept { return params_; }
    std::vector<double>& mutable_params() noexcept { return params_; }

    friend bool operator==(const Model& a, const Model& b) {
        return a.arch_ == b.arch_ && a.height_ == b.height_ && a.width_ == b.width_ &&
               a.classes_ == b.classes_ && a.params_ == b.params_;
    }

private:
    Architecture arch_;
    std::size_t height_, width_;
    int classes_;
    ParamLayout layout_;
    std::vector<double> params_;
};

std::vector<double> forward_logits(const Model& m, const Image& x);

/// -log softmax(logits)[y], evaluated with log-sum-exp.
double cross_entropy_loss(const Model& m, const Image& x, int label);
double cross_entropy_from_logits(const std::vector<double>& logits, int label);

/// Index of the largest logit, ties to the smallest index.
int predict(const Model& m, const Image& x);
int argmax(const std::vector<double>& logits);

/// max_{i != y} logits_i - logits_y.
double logit_margin(const std::vector<double>& logits, int label);

struct LossGradient {
    double loss = 0;
    std::vector<double> logits;
    std::vector<double> input_grad;   // empty unless requested
    std::vector<double> param_grad;   // empty unless requested
};

/// One reverse-mode pass producing the requested gradients of the cross-entropy loss.
LossGradient loss_and_gradients(const Model& m, const Image& x, int label, bool want_input,
                                bool want_params);

std::vector<double> input_gradient(const Model& m, const Image& x, int label);
std::vector<double> param_gradient(const Model& m, const Image& x, int label);

struct TrainConfig {
    double learning_rate = 0.1;
    int epochs = 3;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Minibatch SGD on the mean batch loss starting from `init`; shuffling is driven by
/// `cfg.seed`. When `epoch_loss` is given it receives the mean dataset loss after
/// each epoch.
Model sgd_train(Model init, const Dataset& d, const TrainConfig& cfg,
                std::vector<double>* epoch_loss = nullptr);

/// Seeded initialization followed by `sgd_train`; a pure function of its arguments.
Model train_baseline(Architecture arch, const Dataset& d, const TrainConfig& cfg,
                     std::vector<double>* epoch_loss = nullptr);

/// The initialization `train_baseline` starts from.
Model initial_model(Architecture arch, const Dataset& d, std::uint64_t seed);

double accuracy(const Model& m, const Dataset& d);
double mean_loss(const Model& m, const Dataset& d);

/// Checkpoint layout (all little-endian): "PDROCKPT", u32 version, u32 architecture tag,
/// u32 height, u32 width, u32 class count, u64 parameter count, f64 parameters.
void save_checkpoint(const Model& m, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

} // namespace pdro
