#pragma once

#include <cmath>
#include <vector>

#include "capforge/model/config.hpp"
#include "capforge/numerics/ops.hpp"
#include "capforge/util/rng.hpp"

namespace capforge {

/// CNN encoder: two conv(3x3)-ReLU-maxpool(2x2) stages, an affine feature
/// projection to F, and a sigmoid multi-label attribute head producing A.
struct EncoderParams {
  std::size_t grid = 0;
  Parameter conv1_kernels, conv1_bias;
  Parameter conv2_kernels, conv2_bias;
  Parameter feature_weight, feature_bias;
  Parameter attribute_weight, attribute_bias;

  static EncoderParams init(const ModelDims& d, Rng& rng) {
    auto he = [&](Shape s, std::size_t fan_in) {
      Tensor t(std::move(s));
      const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
      for (double& v : t.storage()) v = sd * rng.normal();
      return t;
    };
    EncoderParams p;
    p.grid = d.grid;
    p.conv1_kernels = {"encoder.conv1.kernels", he({d.conv1_channels, 3, 3, 3}, 27)};
    p.conv1_bias = {"encoder.conv1.bias", Tensor({d.conv1_channels}, 0.01)};
    p.conv2_kernels = {"encoder.conv2.kernels", he({d.conv2_channels, d.conv1_channels, 3, 3}, 9 * d.conv1_channels)};
    p.conv2_bias = {"encoder.conv2.bias", Tensor({d.conv2_channels}, 0.01)};
    p.feature_weight = {"encoder.feature.weight", he({d.feature_dim, d.pooled_size()}, d.pooled_size())};
    p.feature_bias = {"encoder.feature.bias", Tensor({d.feature_dim})};
    Tensor aw({d.attribute_dim, d.feature_dim});
    const double sd = 1.0 / std::sqrt(static_cast<double>(d.feature_dim));
    for (double& v : aw.storage()) v = sd * rng.normal();
    p.attribute_weight = {"encoder.attribute.weight", std::move(aw)};
    p.attribute_bias = {"encoder.attribute.bias", Tensor({d.attribute_dim})};
    return p;
  }

  std::vector<Parameter*> parameters() {
    return {&conv1_kernels, &conv1_bias, &conv2_kernels, &conv2_bias,
            &feature_weight, &feature_bias, &attribute_weight, &attribute_bias};
  }
  std::size_t feature_dim() const { return feature_bias.value.size(); }
  std::size_t attribute_dim() const { return attribute_bias.value.size(); }
};

/// Encoder outputs: feature vector F and attribute probabilities A.
struct EncodedImage {
  std::vector<double> feature;
  std::vector<double> attributes;
};

/// Converts an [H x W x 3] image to the [3 x H x W] layout the convs use.
inline Tensor image_to_chw(const Tensor& image) {
  require(image.rank() == 3, "image must be [H x W x C]");
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  Tensor out({c, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) out[(ch * h + y) * w + x] = image[(y * w + x) * c + ch];
  return out;
}

/// F on the tape. `track` controls whether parameter gradients are collected.
inline Var encode_image(Tape& t, const EncoderParams& p, const Tensor& image, bool track = true) {
  if (image.rank() != 3 || image.dim(0) != p.grid || image.dim(1) != p.grid || image.dim(2) != 3)
    throw ContractViolation("encode_image: expected a " + std::to_string(p.grid) + "x" + std::to_string(p.grid) +
                            "x3 image, got " + shape_str(image.shape()));
  Var x = t.constant(image_to_chw(image));
  x = ops::maxpool2x2(t, ops::relu(t, ops::conv3x3(t, x, t.param(p.conv1_kernels, track), t.param(p.conv1_bias, track))));
  x = ops::maxpool2x2(t, ops::relu(t, ops::conv3x3(t, x, t.param(p.conv2_kernels, track), t.param(p.conv2_bias, track))));
  x = ops::reshape(t, x, {t.value(x).size()});
  return ops::matvec(t, t.param(p.feature_weight, track), x, t.param(p.feature_bias, track));
}

/// A = sigmoid(W_a F + b_a) on the tape.
inline Var predict_attributes(Tape& t, const EncoderParams& p, Var feature, bool track = true) {
  return ops::sigmoid(t, ops::matvec(t, t.param(p.attribute_weight, track), feature, t.param(p.attribute_bias, track)));
}

inline std::vector<double> encode_image(const EncoderParams& p, const Tensor& image) {
  Tape t;
  return t.value(encode_image(t, p, image, false)).storage();
}

inline std::vector<double> predict_attributes(const EncoderParams& p, const std::vector<double>& feature) {
  require(feature.size() == p.feature_dim(), "predict_attributes: feature length mismatch");
  Tape t;
  Var f = t.constant(Tensor::vector(feature));
  return t.value(predict_attributes(t, p, f, false)).storage();
}

inline EncodedImage encode(const EncoderParams& p, const Tensor& image) {
  Tape t;
  Var f = encode_image(t, p, image, false);
  Var a = predict_attributes(t, p, f, false);
  return {t.value(f).storage(), t.value(a).storage()};
}

/// Mean binary cross-entropy between predicted attribute probabilities and
/// 0/1 labels, probabilities clamped to [1e-7, 1-1e-7].
inline double attribute_loss(const std::vector<double>& predicted, const std::vector<double>& labels) {
  Tape t;
  Var p = t.constant(Tensor::vector(predicted));
  return t.value(ops::binary_cross_entropy(t, p, labels)).item();
}

}  // namespace capforge
