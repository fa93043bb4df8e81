#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "whc/params.hpp"
#include "whc/tensor.hpp"

namespace whc {

enum class Variant : std::uint8_t { CSRNet = 0, WHCNet1 = 1, WHCNet2 = 2, WHCNet3 = 3 };

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view name);
inline constexpr Variant kAllVariants[] = {Variant::CSRNet, Variant::WHCNet1, Variant::WHCNet2,
                                           Variant::WHCNet3};

enum class LayerKind { Conv3, Conv1, MaxPool, ConvTranspose, Concat };

/// One entry of a network description. Every conv kind is followed by a ReLU.
///
/// `from` names an earlier tap. For Concat it is the tensor appended after
/// the current one along channels; for the other kinds it replaces the
/// previous layer's output as input. `label` names this layer's output.
struct LayerSpec {
  LayerKind kind = LayerKind::Conv3;
  int out_channels = 0;
  int dilation = 1;
  std::string name;
  std::string label;
  std::string from;
};

/// VGG-16 conv1_1..conv4_3 with three pools; output tap "F" (512 ch, stride 8).
std::vector<LayerSpec> build_frontend();

/// Back end for `v`, consuming tap "F" and ending in the 1-filter 1x1 output conv.
std::vector<LayerSpec> build_backend(Variant v);

/// Static per-layer channel bookkeeping.
struct LayerInfo {
  int in_channels = 0;
  int out_channels = 0;
  int input = -1;   ///< producing layer index, -1 for the image
  int second = -1;  ///< concat partner
};

/// Executable counting network: front end + back end + parameters.
template <typename T>
class Network {
 public:
  /// Activations recorded by forward for use in backward.
  struct Trace {
    nn::Tensor<T> input;
    std::vector<nn::Tensor<T>> outputs;
    std::vector<std::vector<std::uint32_t>> argmax;
  };

  explicit Network(Variant v);

  Variant variant() const { return variant_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  const std::vector<LayerInfo>& layer_info() const { return info_; }
  nn::ParamStore<T>& params() { return params_; }
  const nn::ParamStore<T>& params() const { return params_; }

  /// Spatial multiple every input dimension must satisfy (8, or 16 with the
  /// extra back-end pool).
  int input_multiple() const { return input_multiple_; }
  int output_stride() const { return 8; }

  /// Output shape for `input`; throws ShapeError on channel or divisibility violations.
  nn::Shape output_shape(const nn::Shape& input) const;

  std::size_t param_count() const { return params_.count(); }

  nn::Tensor<T> forward(const nn::Tensor<T>& x, Trace* trace = nullptr) const;

  /// Accumulates parameter gradients for dL/d(output) = `dy` and marks them
  /// populated. Writes dL/d(input) when `dx` is given.
  void backward(const Trace& trace, const nn::Tensor<T>& dy, nn::Tensor<T>* dx = nullptr);

 private:
  void compile();

  Variant variant_;
  std::vector<LayerSpec> layers_;
  std::vector<LayerInfo> info_;
  nn::ParamStore<T> params_;
  int input_multiple_ = 8;
};

using Model = Network<float>;

// WHCW checkpoint: "WHCW", u32 version=1, u8 variant tag, u32 entry count, then
// per parameter tensor: u32 name length, UTF-8 name, u32 rank, u32 dims..., f32 LE data.
std::string encode_weights(const Model& model);
void decode_weights(Model& model, const std::string& bytes);
void save_weights(const Model& model, const std::filesystem::path& path);
void load_weights(Model& model, const std::filesystem::path& path);

/// Variant tag stored in a checkpoint file.
Variant checkpoint_variant(const std::filesystem::path& path);

/// Copies only the `frontend.*` tensors from a checkpoint of any variant,
/// e.g. externally converted pretrained VGG-16 weights.
void load_frontend_weights(Model& model, const std::filesystem::path& path);

}  // namespace whc
