#include "epn/grad.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace epn {
namespace {

void require(bool ok, const char* what) {
  if (!ok) throw Error(what);
}

// Partial derivatives of the rotation-matrix entries with respect to (w, x, y, z),
// evaluated at q, contracted with an upstream 3x3 gradient.
Eigen::Vector4d contract_rotation_jacobian(const Eigen::Vector4d& q, const Mat3& g) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Eigen::Vector4d d = Eigen::Vector4d::Zero();
  auto add = [&](int r, int c, double dw, double dx, double dy, double dz) {
    const double u = g(r, c);
    d[0] += u * dw;
    d[1] += u * dx;
    d[2] += u * dy;
    d[3] += u * dz;
  };
  add(0, 0, 0, 0, -4 * y, -4 * z);
  add(0, 1, -2 * z, 2 * y, 2 * x, -2 * w);
  add(0, 2, 2 * y, 2 * z, 2 * w, 2 * x);
  add(1, 0, 2 * z, 2 * y, 2 * x, 2 * w);
  add(1, 1, 0, -4 * x, 0, -4 * z);
  add(1, 2, -2 * x, -2 * w, 2 * z, 2 * y);
  add(2, 0, -2 * y, 2 * z, -2 * w, 2 * x);
  add(2, 1, 2 * x, 2 * w, 2 * z, 2 * y);
  add(2, 2, 0, -4 * x, -4 * y, 0);
  return d;
}

}  // namespace

ConvGrads se3_point_conv_backward(const FeatureMap& in, const ExplicitKernel& kernel, const NeighborhoodTable& nbr,
                                  const FiniteRotationGroup& group, std::span<const Vec3> centers,
                                  std::span<const double> d_out) {
  const std::size_t kp = kernel.size();
  const std::size_t din = in.channels;
  const std::size_t dout = kernel.out_channels;
  const std::size_t ng = group.order();
  require(d_out.size() == centers.size() * ng * dout, "point conv backward: upstream gradient shape mismatch");
  require(kernel.in_channels == din && in.group_size == ng, "point conv backward: shape mismatch");

  std::vector<Vec3> rotated;
  rotated.reserve(ng * kp);
  for (const Mat3& g : group.elements()) {
    for (const Vec3& y : kernel.points) rotated.push_back(g * y);
  }

  ConvGrads grads{std::vector<double>(in.values.size(), 0.0), std::vector<double>(kernel.weights.size(), 0.0)};
  std::vector<double> acc(kp * din);
  std::vector<double> d_acc(kp * din);
  std::vector<double> kap(nbr.k_max * kp);
  for (std::size_t m = 0; m < centers.size(); ++m) {
    const auto row = nbr.row(m);
    for (std::size_t g = 0; g < ng; ++g) {
      const double* go = d_out.data() + (m * ng + g) * dout;
      const Vec3* yk = rotated.data() + g * kp;
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t s = 0; s < row.size(); ++s) {
        const std::size_t i = row[s];
        if (nbr.is_shadow(i)) continue;
        const Vec3 d = centers[m] - in.coords[i];
        const double* f = in.values.data() + in.offset(i, g);
        for (std::size_t k = 0; k < kp; ++k) {
          const double c = correlation(d, yk[k], kernel.sigma, kernel.kind);
          kap[s * kp + k] = c;
          if (c == 0.0) continue;
          for (std::size_t ch = 0; ch < din; ++ch) acc[k * din + ch] += c * f[ch];
        }
      }
      for (std::size_t kc = 0; kc < kp * din; ++kc) {
        const double* w = kernel.weights.data() + kc * dout;
        double* dw = grads.d_weights.data() + kc * dout;
        double s = 0.0;
        for (std::size_t q = 0; q < dout; ++q) {
          dw[q] += acc[kc] * go[q];
          s += w[q] * go[q];
        }
        d_acc[kc] = s;
      }
      for (std::size_t s = 0; s < row.size(); ++s) {
        const std::size_t i = row[s];
        if (nbr.is_shadow(i)) continue;
        double* df = grads.d_input.data() + in.offset(i, g);
        for (std::size_t k = 0; k < kp; ++k) {
          const double c = kap[s * kp + k];
          if (c == 0.0) continue;
          for (std::size_t ch = 0; ch < din; ++ch) df[ch] += c * d_acc[k * din + ch];
        }
      }
    }
  }
  return grads;
}

ConvGrads implicit_point_conv_backward(const FeatureMap& in, const ImplicitKernelParams& params,
                                       const NeighborhoodTable& nbr, const FiniteRotationGroup& group,
                                       std::span<const Vec3> centers, std::span<const double> d_out) {
  const std::size_t din = in.channels;
  const std::size_t dout = params.out_channels;
  const std::size_t ng = group.order();
  require(d_out.size() == centers.size() * ng * dout, "implicit conv backward: upstream gradient shape mismatch");

  ConvGrads grads{std::vector<double>(in.values.size(), 0.0), std::vector<double>(params.weights.size(), 0.0)};
  for (std::size_t m = 0; m < centers.size(); ++m) {
    for (std::size_t g = 0; g < ng; ++g) {
      const double* go = d_out.data() + (m * ng + g) * dout;
      const Mat3& rot = group.element(g);
      for (std::size_t i : nbr.row(m)) {
        if (nbr.is_shadow(i)) continue;
        const Vec3 local = rot.transpose() * (in.coords[i] - centers[m]);
        const double* f = in.values.data() + in.offset(i, g);
        double* df = grads.d_input.data() + in.offset(i, g);
        for (std::size_t c = 0; c < din; ++c) {
          const double* w = params.weights.data() + c * dout;
          double* dw = grads.d_weights.data() + c * dout;
          double s = 0.0;
          for (std::size_t q = 0; q < dout; ++q) {
            dw[q] += f[c] * go[q];
            s += w[q] * go[q];
          }
          df[c] += s;
        }
        for (std::size_t a = 0; a < 3; ++a) {
          double* dw = grads.d_weights.data() + (din + a) * dout;
          for (std::size_t q = 0; q < dout; ++q) dw[q] += local[static_cast<Eigen::Index>(a)] * go[q];
        }
      }
    }
  }
  return grads;
}

ConvGrads se3_group_conv_backward(const FeatureMap& in, const GroupKernel& kernel, const FiniteRotationGroup& group,
                                  std::span<const double> d_out) {
  const std::size_t kg = kernel.neighbors;
  const std::size_t din = in.channels;
  const std::size_t dout = kernel.out_channels;
  const std::size_t ng = group.order();
  require(d_out.size() == in.points() * ng * dout, "group conv backward: upstream gradient shape mismatch");
  const auto table = group.neighbor_table(kg);

  ConvGrads grads{std::vector<double>(in.values.size(), 0.0), std::vector<double>(kernel.weights.size(), 0.0)};
  for (std::size_t n = 0; n < in.points(); ++n) {
    for (std::size_t g = 0; g < ng; ++g) {
      const double* go = d_out.data() + (n * ng + g) * dout;
      for (std::size_t j = 0; j < kg; ++j) {
        const std::size_t src = in.offset(n, table[g * kg + j]);
        const double* f = in.values.data() + src;
        double* df = grads.d_input.data() + src;
        const double* wj = kernel.weights.data() + j * din * dout;
        double* dwj = grads.d_weights.data() + j * din * dout;
        for (std::size_t c = 0; c < din; ++c) {
          double s = 0.0;
          for (std::size_t q = 0; q < dout; ++q) {
            dwj[c * dout + q] += f[c] * go[q];
            s += wj[c * dout + q] * go[q];
          }
          df[c] += s;
        }
      }
    }
  }
  return grads;
}

std::vector<double> leaky_relu_backward(std::span<const double> pre, std::span<const double> d_out) {
  require(pre.size() == d_out.size(), "leaky relu backward: shape mismatch");
  std::vector<double> d(pre.size());
  for (std::size_t i = 0; i < pre.size(); ++i) d[i] = pre[i] >= 0.0 ? d_out[i] : kLeakySlope * d_out[i];
  return d;
}

BatchNormGrads batch_norm_train_backward(const FeatureMap& in, const BatchNorm& bn, std::span<const double> d_out) {
  const std::size_t d = in.channels;
  const std::size_t rows = in.points() * in.group_size;
  require(rows > 0, "batch norm backward over an empty batch");
  require(d_out.size() == in.values.size(), "batch norm backward: shape mismatch");
  const double nrows = static_cast<double>(rows);

  BatchNormGrads grads{std::vector<double>(in.values.size()), std::vector<double>(d, 0.0),
                       std::vector<double>(d, 0.0)};
  for (std::size_t c = 0; c < d; ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < rows; ++r) mean += in.values[r * d + c];
    mean /= nrows;
    double var = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      const double x = in.values[r * d + c] - mean;
      var += x * x;
    }
    var /= nrows;
    const double inv_std = 1.0 / std::sqrt(var + bn.eps);

    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      const double xhat = (in.values[r * d + c] - mean) * inv_std;
      const double gy = d_out[r * d + c];
      grads.d_beta[c] += gy;
      grads.d_gamma[c] += gy * xhat;
      const double dxhat = gy * bn.gamma[c];
      sum_dxhat += dxhat;
      sum_dxhat_xhat += dxhat * xhat;
    }
    for (std::size_t r = 0; r < rows; ++r) {
      const double xhat = (in.values[r * d + c] - mean) * inv_std;
      const double dxhat = d_out[r * d + c] * bn.gamma[c];
      grads.d_input[r * d + c] = inv_std / nrows * (nrows * dxhat - sum_dxhat - xhat * sum_dxhat_xhat);
    }
  }
  return grads;
}

BatchNormGrads batch_norm_infer_backward(const FeatureMap& in, const BatchNorm& bn, std::span<const double> d_out) {
  const std::size_t d = in.channels;
  const std::size_t rows = in.points() * in.group_size;
  require(d_out.size() == in.values.size(), "batch norm backward: shape mismatch");
  BatchNormGrads grads{std::vector<double>(in.values.size()), std::vector<double>(d, 0.0),
                       std::vector<double>(d, 0.0)};
  for (std::size_t c = 0; c < d; ++c) {
    const double inv_std = 1.0 / std::sqrt(bn.running_var[c] + bn.eps);
    for (std::size_t r = 0; r < rows; ++r) {
      const double gy = d_out[r * d + c];
      grads.d_beta[c] += gy;
      grads.d_gamma[c] += gy * (in.values[r * d + c] - bn.running_mean[c]) * inv_std;
      grads.d_input[r * d + c] = gy * bn.gamma[c] * inv_std;
    }
  }
  return grads;
}

std::vector<double> pool_mean_backward(const GroupFeatures& features, std::span<const double> d_out) {
  require(d_out.size() == features.channels, "pool_mean backward: shape mismatch");
  std::vector<double> d(features.values.size());
  const double scale = 1.0 / static_cast<double>(features.group_size);
  for (std::size_t g = 0; g < features.group_size; ++g) {
    for (std::size_t c = 0; c < features.channels; ++c) d[g * features.channels + c] = d_out[c] * scale;
  }
  return d;
}

std::vector<double> pool_max_backward(const GroupFeatures& features, std::span<const double> d_out) {
  require(d_out.size() == features.channels, "pool_max backward: shape mismatch");
  std::vector<double> d(features.values.size(), 0.0);
  for (std::size_t c = 0; c < features.channels; ++c) {
    std::size_t best = 0;
    for (std::size_t g = 1; g < features.group_size; ++g) {
      if (features.values[g * features.channels + c] > features.values[best * features.channels + c]) best = g;
    }
    d[best * features.channels + c] = d_out[c];
  }
  return d;
}

GaPoolingGrads ga_pooling_backward(const GroupFeatures& features, const AttentionVector& a, double temperature,
                                   std::span<const double> d_out) {
  require(d_out.size() == features.channels, "ga_pooling backward: shape mismatch");
  const auto w = ga_pooling_weights(a, temperature);
  const std::size_t ng = features.group_size;
  const std::size_t d = features.channels;
  GaPoolingGrads grads{std::vector<double>(ng * d), std::vector<double>(ng)};
  std::vector<double> dw(ng, 0.0);
  double weighted = 0.0;
  for (std::size_t g = 0; g < ng; ++g) {
    for (std::size_t c = 0; c < d; ++c) {
      grads.d_features[g * d + c] = w[g] * d_out[c];
      dw[g] += features.values[g * d + c] * d_out[c];
    }
    weighted += w[g] * dw[g];
  }
  for (std::size_t g = 0; g < ng; ++g) grads.d_attention[g] = w[g] * (dw[g] - weighted) / temperature;
  return grads;
}

std::vector<double> softmax_backward(std::span<const double> probs, std::span<const double> d_probs) {
  require(probs.size() == d_probs.size(), "softmax backward: shape mismatch");
  double dot = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) dot += probs[i] * d_probs[i];
  std::vector<double> d(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) d[i] = probs[i] * (d_probs[i] - dot);
  return d;
}

std::vector<double> spherical_interpolate_backward(const FiniteRotationGroup& group, const Mat3& query,
                                                   std::size_t k, double lambda, std::size_t channels,
                                                   std::span<const double> d_out) {
  require(d_out.size() == channels, "interpolation backward: shape mismatch");
  const auto iw = spherical_interpolation_weights(group, query, k, lambda);
  std::vector<double> d(group.order() * channels, 0.0);
  for (std::size_t t = 0; t < iw.indices.size(); ++t) {
    for (std::size_t c = 0; c < channels; ++c) d[iw.indices[t] * channels + c] += iw.weights[t] * d_out[c];
  }
  return d;
}

DenseGrads dense_backward(const Dense& layer, std::span<const double> x, std::size_t rows,
                          std::span<const double> d_out) {
  require(x.size() == rows * layer.in_dim && d_out.size() == rows * layer.out_dim, "dense backward: shape mismatch");
  DenseGrads grads{std::vector<double>(x.size(), 0.0), std::vector<double>(layer.weights.size(), 0.0),
                   std::vector<double>(layer.out_dim, 0.0)};
  for (std::size_t r = 0; r < rows; ++r) {
    const double* go = d_out.data() + r * layer.out_dim;
    for (std::size_t o = 0; o < layer.out_dim; ++o) grads.d_bias[o] += go[o];
    for (std::size_t i = 0; i < layer.in_dim; ++i) {
      const double xi = x[r * layer.in_dim + i];
      const double* w = layer.weights.data() + i * layer.out_dim;
      double* dw = grads.d_weights.data() + i * layer.out_dim;
      double s = 0.0;
      for (std::size_t o = 0; o < layer.out_dim; ++o) {
        dw[o] += xi * go[o];
        s += w[o] * go[o];
      }
      grads.d_input[r * layer.in_dim + i] = s;
    }
  }
  return grads;
}

LossGrad cross_entropy_backward(std::span<const double> logits, std::size_t label) {
  LossGrad out;
  out.loss = cross_entropy(logits, label);
  out.d_logits = softmax(logits);
  out.d_logits[label] -= 1.0;
  return out;
}

QuaternionLossGrad rotation_frobenius_backward(const Eigen::Vector4d& raw, const Mat3& target) {
  const double norm = raw.norm();
  require(norm > 0.0 && std::isfinite(norm), "cannot normalize a zero or non-finite quaternion");
  const Eigen::Vector4d q = raw / norm;
  const Mat3 r = rotation_from_quaternion(UnitQuaternion{q[0], q[1], q[2], q[3]});
  const Mat3 diff = r - target;
  QuaternionLossGrad out;
  out.loss = diff.squaredNorm();
  const Eigen::Vector4d dq = contract_rotation_jacobian(q, 2.0 * diff);
  out.d_raw = (dq - q * q.dot(dq)) / norm;
  return out;
}

DetectionLossGrad detection_loss_backward(std::span<const double> logits, std::span<const double> raw_residuals,
                                          const Mat3& r_gt, const FiniteRotationGroup& group, double lambda) {
  const std::size_t ng = group.order();
  require(logits.size() == ng && raw_residuals.size() == ng * 4, "detection loss backward: shape mismatch");
  DetectionLossGrad out;
  const std::size_t u = nearest_group_element(group, r_gt).index;
  const auto ce = cross_entropy_backward(logits, u);
  const Eigen::Vector4d raw(raw_residuals[u * 4], raw_residuals[u * 4 + 1], raw_residuals[u * 4 + 2],
                            raw_residuals[u * 4 + 3]);
  const auto reg = rotation_frobenius_backward(raw, r_gt * group.element(u).transpose());

  out.loss.label = u;
  out.loss.classification = ce.loss;
  out.loss.regression = reg.loss;
  out.loss.total = ce.loss + lambda * reg.loss;
  out.d_logits = ce.d_logits;
  out.d_residuals.assign(ng * 4, 0.0);
  for (int a = 0; a < 4; ++a) out.d_residuals[u * 4 + static_cast<std::size_t>(a)] = lambda * reg.d_raw[a];
  return out;
}

TripletGrads batch_hard_triplet_backward(std::span<const double> anchors, std::span<const double> positives,
                                         std::size_t batch, std::size_t dim, double margin) {
  TripletGrads out;
  out.loss = batch_hard_triplet(anchors, positives, batch, dim, margin);
  out.d_anchors.assign(batch * dim, 0.0);
  out.d_positives.assign(batch * dim, 0.0);
  auto dist = [&](std::size_t i, std::size_t j) {
    double s = 0.0;
    for (std::size_t c = 0; c < dim; ++c) {
      const double d = anchors[i * dim + c] - positives[j * dim + c];
      s += d * d;
    }
    return std::sqrt(s);
  };
  const double scale = 1.0 / static_cast<double>(batch);
  // d|a_i - p_j| / d a_i = (a_i - p_j) / |a_i - p_j|, zero at coincidence.
  auto accumulate = [&](std::size_t i, std::size_t j, double sign) {
    const double dij = dist(i, j);
    if (dij == 0.0) return;
    for (std::size_t c = 0; c < dim; ++c) {
      const double u = sign * scale * (anchors[i * dim + c] - positives[j * dim + c]) / dij;
      out.d_anchors[i * dim + c] += u;
      out.d_positives[j * dim + c] -= u;
    }
  };
  for (std::size_t i = 0; i < batch; ++i) {
    std::size_t hardest = i;
    double hardest_d = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < batch; ++j) {
      if (j == i) continue;
      const double d = dist(i, j);
      if (d < hardest_d) {
        hardest_d = d;
        hardest = j;
      }
    }
    if (dist(i, i) - hardest_d + margin <= 0.0) continue;
    accumulate(i, i, 1.0);
    accumulate(i, hardest, -1.0);
  }
  return out;
}

}  // namespace epn
