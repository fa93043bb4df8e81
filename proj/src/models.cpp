#include "whc/models.hpp"

#include <map>

#include "whc/error.hpp"
#include "whc/ops.hpp"

namespace whc {

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::CSRNet: return "CSRNet";
    case Variant::WHCNet1: return "WHCNet1";
    case Variant::WHCNet2: return "WHCNet2";
    case Variant::WHCNet3: return "WHCNet3";
  }
  throw InvalidArgument("unknown variant tag " + std::to_string(int(v)));
}

Variant parse_variant(std::string_view name) {
  for (Variant v : kAllVariants)
    if (variant_name(v) == name) return v;
  if (name == "WHCNet_1") return Variant::WHCNet1;
  if (name == "WHCNet_2") return Variant::WHCNet2;
  if (name == "WHCNet_3") return Variant::WHCNet3;
  throw InvalidArgument("unknown variant '" + std::string(name) + "'");
}

namespace {

LayerSpec conv3(std::string name, int ch, int dilation = 1, std::string label = {}, std::string from = {}) {
  return LayerSpec{LayerKind::Conv3, ch, dilation, std::move(name), std::move(label), std::move(from)};
}

LayerSpec pool(std::string name) { return LayerSpec{LayerKind::MaxPool, 0, 1, std::move(name), {}, {}}; }

LayerSpec concat(std::string name, std::string from) {
  return LayerSpec{LayerKind::Concat, 0, 1, std::move(name), {}, std::move(from)};
}

LayerSpec output_conv() { return LayerSpec{LayerKind::Conv1, 1, 1, "output", {}, {}}; }

}  // namespace

std::vector<LayerSpec> build_frontend() {
  return {
      conv3("frontend.conv1_1", 64),  conv3("frontend.conv1_2", 64),  pool("frontend.pool1"),
      conv3("frontend.conv2_1", 128), conv3("frontend.conv2_2", 128), pool("frontend.pool2"),
      conv3("frontend.conv3_1", 256), conv3("frontend.conv3_2", 256), conv3("frontend.conv3_3", 256),
      pool("frontend.pool3"),
      conv3("frontend.conv4_1", 512), conv3("frontend.conv4_2", 512),
      conv3("frontend.conv4_3", 512, 1, "F"),
  };
}

std::vector<LayerSpec> build_backend(Variant v) {
  switch (v) {
    case Variant::CSRNet:
      return {conv3("backend.conv1", 512, 2), conv3("backend.conv2", 512, 2),
              conv3("backend.conv3", 512, 2), conv3("backend.conv4", 256, 2),
              conv3("backend.conv5", 128, 2), conv3("backend.conv6", 64, 2), output_conv()};
    case Variant::WHCNet1:
      // Down/up-sampling part, then four skips braided over consecutive taps.
      return {pool("backend.pool"),
              conv3("backend.conv1", 1024),
              conv3("backend.conv2", 512),
              LayerSpec{LayerKind::ConvTranspose, 512, 1, "backend.up", "U", {}},
              concat("backend.cat1", "F"),
              conv3("backend.conv3", 512, 1, "C3"),
              concat("backend.cat2", "U"),
              conv3("backend.conv4", 256, 2, "C4"),
              concat("backend.cat3", "C3"),
              conv3("backend.conv5", 128, 1, "C5"),
              concat("backend.cat4", "C4"),
              conv3("backend.conv6", 64, 2),
              output_conv()};
    case Variant::WHCNet2:
      return {conv3("backend.skip", 128, 1, "P", "F"),
              conv3("backend.conv1", 512, 1, {}, "F"),
              conv3("backend.conv2", 256),
              conv3("backend.conv3", 256),
              conv3("backend.conv4", 128),
              conv3("backend.conv5", 128),
              concat("backend.cat", "P"),
              conv3("backend.conv6", 128),
              conv3("backend.conv7", 128),
              conv3("backend.conv8", 64),
              output_conv()};
    case Variant::WHCNet3:
      return {conv3("backend.skip", 64, 1, "P", "F"),
              conv3("backend.conv1", 256, 1, {}, "F"),
              conv3("backend.conv2", 256),
              conv3("backend.conv3", 128),
              conv3("backend.conv4", 128),
              conv3("backend.conv5", 64),
              conv3("backend.conv6", 64),
              concat("backend.cat", "P"),
              conv3("backend.conv7", 64),
              conv3("backend.conv8", 64),
              output_conv()};
  }
  throw InvalidArgument("unknown variant tag " + std::to_string(int(v)));
}

template <typename T>
Network<T>::Network(Variant v) : variant_(v) {
  layers_ = build_frontend();
  auto back = build_backend(v);
  layers_.insert(layers_.end(), back.begin(), back.end());
  compile();
}

template <typename T>
void Network<T>::compile() {
  std::map<std::string, int> taps;
  info_.assign(layers_.size(), LayerInfo{});
  int cur = -1;
  int cur_channels = 3;
  int pools = 0, ups = 0, conv1_count = 0;

  auto channels_of = [&](int idx) { return idx < 0 ? 3 : info_[std::size_t(idx)].out_channels; };
  auto resolve = [&](const LayerSpec& l) {
    auto it = taps.find(l.from);
    if (it == taps.end())
      throw ShapeError("layer " + l.name + " references unknown tap '" + l.from + "'");
    return it->second;
  };

  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const LayerSpec& l = layers_[i];
    LayerInfo& li = info_[i];
    if (l.kind == LayerKind::Concat) {
      li.input = cur;
      li.second = resolve(l);
      li.in_channels = cur_channels;
      li.out_channels = cur_channels + channels_of(li.second);
    } else {
      li.input = l.from.empty() ? cur : resolve(l);
      li.in_channels = channels_of(li.input);
      switch (l.kind) {
        case LayerKind::MaxPool:
          li.out_channels = li.in_channels;
          ++pools;
          break;
        case LayerKind::ConvTranspose:
          ++ups;
          [[fallthrough]];
        case LayerKind::Conv3:
        case LayerKind::Conv1: {
          if (l.out_channels < 1) throw ShapeError("layer " + l.name + " has no output channels");
          if (l.dilation != 1 && l.dilation != 2)
            throw ShapeError("layer " + l.name + " has dilation " + std::to_string(l.dilation));
          li.out_channels = l.out_channels;
          const int k = l.kind == LayerKind::Conv1 ? 1 : 3;
          if (l.kind == LayerKind::Conv1) ++conv1_count;
          const nn::Shape wshape = l.kind == LayerKind::ConvTranspose
                                       ? nn::Shape{li.in_channels, li.out_channels, 3, 3}
                                       : nn::Shape{li.out_channels, li.in_channels, k, k};
          params_.add(l.name + ".weight", 4, wshape, false, li.in_channels * k * k);
          params_.add(l.name + ".bias", 1, nn::Shape{li.out_channels, 1, 1, 1}, true, li.in_channels * k * k);
          break;
        }
        case LayerKind::Concat:
          break;
      }
    }
    cur = int(i);
    cur_channels = li.out_channels;
    if (!l.label.empty()) {
      if (!taps.emplace(l.label, int(i)).second) throw ShapeError("duplicate tap label " + l.label);
    }
  }

  const LayerSpec& last = layers_.back();
  if (last.kind != LayerKind::Conv1 || last.out_channels != 1 || conv1_count != 1)
    throw ShapeError("network must end in exactly one 1-filter 1x1 conv");
  if (pools - ups != 3) throw ShapeError("network output stride must be 8");
  input_multiple_ = 1 << pools;
}

template <typename T>
nn::Shape Network<T>::output_shape(const nn::Shape& input) const {
  if (input.c != 3) throw ShapeError("network input must have 3 channels, got " + std::to_string(input.c));
  if (input.n < 1 || input.h < 1 || input.w < 1) throw ShapeError("empty network input " + input.str());
  if (input.h % input_multiple_ != 0 || input.w % input_multiple_ != 0)
    throw ShapeError(std::string(variant_name(variant_)) + " needs input height and width divisible by " +
                     std::to_string(input_multiple_) + ", got " + std::to_string(input.h) + "x" +
                     std::to_string(input.w));
  return nn::Shape{input.n, 1, input.h / 8, input.w / 8};
}

template <typename T>
nn::Tensor<T> Network<T>::forward(const nn::Tensor<T>& x, Trace* trace) const {
  output_shape(x.shape());
  std::vector<nn::Tensor<T>> local;
  std::vector<nn::Tensor<T>>& outs = trace ? trace->outputs : local;
  outs.assign(layers_.size(), nn::Tensor<T>{});
  if (trace) {
    trace->input = x;
    trace->argmax.assign(layers_.size(), {});
  }
  // Without a trace, activations are released once no later layer reads them.
  std::vector<int> last_use(layers_.size(), -1);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (info_[i].input >= 0) last_use[std::size_t(info_[i].input)] = int(i);
    if (info_[i].second >= 0) last_use[std::size_t(info_[i].second)] = int(i);
  }

  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const LayerSpec& l = layers_[i];
    const LayerInfo& li = info_[i];
    const nn::Tensor<T>& in = li.input < 0 ? x : outs[std::size_t(li.input)];
    try {
      switch (l.kind) {
        case LayerKind::Conv3:
        case LayerKind::Conv1:
          outs[i] = nn::relu(nn::conv2d_same(in, params_.get(l.name + ".weight").value,
                                             params_.get(l.name + ".bias").value, l.dilation));
          break;
        case LayerKind::ConvTranspose:
          outs[i] = nn::relu(nn::conv_transpose2d_x2(in, params_.get(l.name + ".weight").value,
                                                     params_.get(l.name + ".bias").value));
          break;
        case LayerKind::MaxPool:
          outs[i] = nn::maxpool2x2(in, trace ? &trace->argmax[i] : nullptr);
          break;
        case LayerKind::Concat:
          outs[i] = nn::concat_channels(in, outs[std::size_t(li.second)]);
          break;
      }
    } catch (const ShapeError& e) {
      throw ShapeError("layer " + l.name + ": " + e.what());
    }
    if (!trace) {
      for (std::size_t j = 0; j < i; ++j)
        if (last_use[j] <= int(i) && !outs[j].empty()) outs[j] = nn::Tensor<T>{};
    }
  }
  if (trace) return outs.back();
  return std::move(outs.back());
}

template <typename T>
void Network<T>::backward(const Trace& trace, const nn::Tensor<T>& dy, nn::Tensor<T>* dx) {
  if (trace.outputs.size() != layers_.size()) throw ShapeError("backward: trace does not match network");
  if (dy.shape() != trace.outputs.back().shape())
    throw ShapeError("backward: output gradient " + dy.shape().str() + " vs output " +
                     trace.outputs.back().shape().str());

  std::vector<nn::Tensor<T>> grads(layers_.size());
  nn::Tensor<T> input_grad;
  grads.back() = dy;

  auto accumulate = [&](int idx, nn::Tensor<T>&& g) {
    nn::Tensor<T>& dst = idx < 0 ? input_grad : grads[std::size_t(idx)];
    if (dst.empty()) {
      dst = std::move(g);
    } else {
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += g[k];
    }
  };

  for (std::size_t ii = layers_.size(); ii-- > 0;) {
    if (grads[ii].empty()) continue;
    const LayerSpec& l = layers_[ii];
    const LayerInfo& li = info_[ii];
    const nn::Tensor<T>& in = li.input < 0 ? trace.input : trace.outputs[std::size_t(li.input)];
    const bool want_dx = li.input >= 0 || dx != nullptr;
    nn::Tensor<T> g = std::move(grads[ii]);

    switch (l.kind) {
      case LayerKind::Conv3:
      case LayerKind::Conv1:
      case LayerKind::ConvTranspose: {
        g = nn::relu_backward(trace.outputs[ii], g);
        auto& w = params_.get(l.name + ".weight");
        auto& b = params_.get(l.name + ".bias");
        nn::Tensor<T> gin;
        if (l.kind == LayerKind::ConvTranspose)
          nn::conv_transpose2d_x2_backward(in, w.value, g, want_dx ? &gin : nullptr, w.grad, b.grad);
        else
          nn::conv2d_same_backward(in, w.value, g, l.dilation, want_dx ? &gin : nullptr, w.grad, b.grad);
        w.has_grad = true;
        b.has_grad = true;
        if (want_dx) accumulate(li.input, std::move(gin));
        break;
      }
      case LayerKind::MaxPool:
        accumulate(li.input, nn::maxpool2x2_backward(g, trace.argmax[ii], in.shape()));
        break;
      case LayerKind::Concat: {
        auto [ga, gb] = nn::split_channels(g, li.in_channels);
        accumulate(li.input, std::move(ga));
        accumulate(li.second, std::move(gb));
        break;
      }
    }
  }
  if (dx) *dx = input_grad.empty() ? nn::Tensor<T>(trace.input.shape()) : std::move(input_grad);
}

template class Network<float>;
template class Network<double>;

}  // namespace whc
