#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "irdseg/guided_conv.hpp"
#include "irdseg/synth_data.hpp"
#include "irdseg/tensor.hpp"

namespace irdseg {

enum class ConvMode { standard, shape, depth_aware, da_shape };

std::string to_string(ConvMode mode);
ConvMode conv_mode_from_string(const std::string& name);

struct NetworkConfig {
    std::size_t in_channels = 2;  // IR-D; 4 = replicated-IR baseline parity
    std::size_t n_classes = 6;
    std::vector<std::size_t> encoder_channels = {16, 32, 64};
    std::size_t kernel_size = 3;
    ConvMode conv_mode = ConvMode::da_shape;
    double alpha = 1.0;
    std::uint64_t seed = 1;

    void validate() const;
    std::size_t encoder_depth() const { return encoder_channels.size(); }
};

std::string serialize_network_config(const NetworkConfig& config);
NetworkConfig parse_network_config(const std::string& text);

// One learnable convolution. Encoder layers honor the configured mode;
// decoder layers and heads are always plain.
struct ConvLayer {
    GuidedConvParams params;  // w_base/w_shape empty unless shape_composed
    ConvGeometry geom;
    bool shape_composed = false;
    bool depth_guided = false;
};

// Hard-parameter-sharing encoder-decoder: one encoder feeds both the
// segmentation and the depth-completion decoder. Encoder block = conv (same
// resolution) + rectifier + 2x2 mean downsample; decoder stage = 2x nearest
// upsample + skip concat + conv + rectifier. The depth head is rectified
// through softplus so predictions stay nonnegative.
struct Model {
    NetworkConfig config;
    std::vector<ConvLayer> encoder;
    std::vector<ConvLayer> seg_decoder;  // indexed by mirrored encoder stage
    ConvLayer seg_head;
    std::vector<ConvLayer> depth_decoder;
    ConvLayer depth_head;
};

Model build_model(const NetworkConfig& config);

struct ParamRef {
    std::string name;
    Tensor* tensor;
};
std::vector<ParamRef> parameters(Model& model);
std::size_t count_params(const Model& model);

// Per-stage guidance maps: entry i is the input depth nearest-neighbor
// downsampled i times (entry 0 is the input itself).
std::vector<Tensor> guidance_chain(const Tensor& depth, std::size_t stages);

// Fixed feature scales for the input channels. Holes stay exactly 0 under
// linear scaling; the depth-similarity guidance always sees unscaled depth.
inline constexpr double kIrInputScale = 1.0 / 255.0;
inline constexpr double kDepthInputScale = 0.25;
// The depth head emits softplus(pre + offset), so a zero-initialized head
// starts mid-range instead of ramping up from softplus(0).
inline constexpr double kDepthHeadOffset = 2.5;

// Network input assembly: channel layout [ir, depth] for 2 channels or
// [ir x3, depth] for 4, each channel under its fixed feature scale.
Tensor make_input(const Tensor& ir, const Tensor& depth, std::size_t in_channels);

struct ForwardResult {
    Tensor seg_logits;   // H x W x n_classes
    Tensor dense_depth;  // H x W, >= 0
};

ForwardResult forward(const Model& model, const Tensor& input, const DepthGuidance& guide);

// out = mask*pred + (1-mask)*raw
Tensor composite_depth(const Tensor& pred, const Tensor& raw_depth, const Tensor& mask);

// Mean absolute error over mask==1 pixels; 0 when nothing is missing.
double masked_depth_loss(const Tensor& pred, const Tensor& gt_filled, const Tensor& mask);
Tensor masked_depth_loss_grad(const Tensor& pred, const Tensor& gt_filled, const Tensor& mask);

// Mean per-pixel softmax cross-entropy; ignore_id ground-truth pixels are
// excluded. ignore_id < 0 disables ignoring.
double seg_loss(const Tensor& logits, const Tensor& labels, int ignore_id = -1);
Tensor seg_loss_grad(const Tensor& logits, const Tensor& labels, int ignore_id = -1);

double total_loss(double seg, double depth, double lambda_depth);

// SGD with momentum 0.9 and weight decay 5e-4:
//   v <- 0.9*v + (g + 5e-4*theta); theta <- theta - lr*v
struct OptimizerState {
    double learning_rate = 0.05;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::vector<Tensor> velocity;  // parallel to parameters(model)
};

OptimizerState make_optimizer(Model& model, double learning_rate);
void sgd_update(Model& model, OptimizerState& opt, const std::vector<Tensor>& grads);

struct TrainStepReport {
    double seg = 0.0;
    double depth = 0.0;
    double total = 0.0;
};

// One SGD step over a batch: per-sample forward/backward (parallel across
// samples, reduced in index order), batch-mean gradients, then the update.
// Throws NumericalError when a loss goes non-finite.
TrainStepReport train_step(Model& model, const std::vector<const ImageSample*>& batch,
                           OptimizerState& opt, double lambda_depth);

// Batch-mean losses and gradients without touching the model; train_step is
// this plus sgd_update.
TrainStepReport compute_batch_gradients(Model& model,
                                        const std::vector<const ImageSample*>& batch,
                                        double lambda_depth, std::vector<Tensor>& grads);

// Checkpoint: "IRDM", u32 version, canonical config text, named parameter
// tensors in the fixture format.
void save_checkpoint(const std::string& path, const Model& model);
Model load_checkpoint(const std::string& path);

}  // namespace irdseg
