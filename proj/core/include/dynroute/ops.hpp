#ifndef DYNROUTE_OPS_HPP_
#define DYNROUTE_OPS_HPP_

#include <span>
#include <vector>

#include "dynroute/tape.hpp"

// Differentiable operations over Vars. Every op validates shapes and throws
// ConfigError naming the op and the offending shapes on mismatch.
namespace dynroute::ops {

// Elementwise arithmetic on equally shaped operands.
Var add(Var x, Var y);
Var sub(Var x, Var y);
Var mul(Var x, Var y);
Var scale(Var x, double k);
Var add_scalar(Var x, double k);
Var square(Var x);

// Elementwise product with an untracked tensor of identical shape.
Var mul_const(Var x, const Tensor& c);

Var tanh(Var x);
Var relu(Var x);
Var exp(Var x);
Var clamp(Var x, double lo, double hi);

// Reductions to a rank-0 scalar.
Var sum(Var x);
Var mean(Var x);

// Largest element of a 1-D vector. The gradient goes to the first maximal
// element (lowest index wins ties).
Var max_over_vector(Var v);
// Row-wise max of a B x K matrix, same tie rule, giving a length-B vector.
Var rowwise_max(Var m);

// Cosine of the angle between two equal-length 1-D vectors. Defined as 0 with
// zero gradient when either vector has zero norm.
Var cosine_similarity(Var u, Var v);

// 1x1 convolution without bias. x: B x Cin x H x W, w: Cout x Cin.
// Output spatial size is (H - 1) / stride + 1.
Var conv2d_1x1(Var x, Var w, int stride);

// 3x3 depthwise convolution with zero padding 1. w: C x 3 x 3.
Var depthwise_conv3x3(Var x, Var w, int stride);

// Depthwise 3x3 (stride applied here) followed by a pointwise 1x1 projection.
Var depthwise_separable_conv3x3(Var x, Var w_dw, Var w_pw, int stride);

// Adds b[c] to every location of channel c of a B x C x H x W map.
Var add_channel_bias(Var x, Var b);
// Per-sample normalization over all of C x H x W (one group), then a
// per-channel affine gamma[c] * xhat + beta[c]. Batch independent.
Var group_norm(Var x, Var gamma, Var beta, double eps = 1e-5);

// Adaptive average pooling to out_h x out_w using floor/ceil bin edges.
Var avg_pool_to(Var x, int out_h, int out_w);
// B x C x H x W -> B x C.
Var global_avg_pool(Var x);

// x: B x In, w: Out x In, b: Out -> B x Out.
Var fully_connected(Var x, Var w, Var b);

// 2x bilinear upsampling, align_corners = false (half-pixel centers, source
// coordinates clamped at the border).
Var bilinear_upsample_2x(Var x);

// Multiplies every element of sample i (leading dimension) by g[i].
Var scale_per_sample(Var x, Var g);

// Column k of a B x K matrix as a length-B vector.
Var column(Var m, int k);
// Row i of a B x K matrix as a length-K vector.
Var row(Var m, int i);
// Concatenates B x K_i matrices along columns.
Var concat_columns(std::span<const Var> parts);
// m: B x K, c: K (untracked) -> length-B vector of row dot products.
Var matvec_const(Var m, std::span<const double> c);

// Sum of sigmoid focal loss over all elements:
//   -alpha_t * (1 - p_t)^gamma * log(p_t),  p = sigmoid(logit).
// `targets` holds 0/1 labels with the logits' shape.
Var sigmoid_focal_loss_sum(Var logits, const Tensor& targets, double alpha,
                           double gamma);

// Sum over masked locations of -log(IoU) between predicted and target
// (l, t, r, b) distance boxes. pred, target: B x 4 x H x W (pred > 0);
// mask: B x H x W with entries in {0, 1}.
Var iou_loss_sum(Var pred, const Tensor& target, const Tensor& mask);

}  // namespace dynroute::ops

#endif  // DYNROUTE_OPS_HPP_
