#include "dlab/nn.hpp"

#include <cmath>

namespace dlab {

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::maxpool2d: return "maxpool2d";
    case LayerKind::relu: return "relu";
    case LayerKind::flatten: return "flatten";
  }
  return "unknown";
}

LayerKind layer_kind_from_string(const std::string& name) {
  for (auto k : {LayerKind::dense, LayerKind::conv2d, LayerKind::maxpool2d, LayerKind::relu,
                 LayerKind::flatten}) {
    if (to_string(k) == name) return k;
  }
  throw ValueError("unknown layer kind '" + name + "'");
}

LayerSpec LayerSpec::dense(Index in, Index out) {
  LayerSpec s;
  s.kind = LayerKind::dense;
  s.in_features = in;
  s.out_features = out;
  return s;
}

LayerSpec LayerSpec::conv2d(Index in_channels, Index out_channels, Index kernel, Padding padding) {
  LayerSpec s;
  s.kind = LayerKind::conv2d;
  s.in_channels = in_channels;
  s.out_channels = out_channels;
  s.kernel = kernel;
  s.padding = padding;
  return s;
}

LayerSpec LayerSpec::maxpool2d(Index size) {
  LayerSpec s;
  s.kind = LayerKind::maxpool2d;
  s.pool = size;
  return s;
}

LayerSpec LayerSpec::relu() { return LayerSpec{}; }

LayerSpec LayerSpec::flatten() {
  LayerSpec s;
  s.kind = LayerKind::flatten;
  return s;
}

namespace {

std::string layer_name(std::size_t i, const LayerSpec& spec) {
  return "layer " + std::to_string(i) + " (" + to_string(spec.kind) + ")";
}

// Leading padding for a conv layer; trailing padding is kernel - 1 - lead for "same".
Index pad_lead(const LayerSpec& s) { return s.padding == Padding::same ? (s.kernel - 1) / 2 : 0; }
Index pad_total(const LayerSpec& s) { return s.padding == Padding::same ? s.kernel - 1 : 0; }

Shape output_shape(std::size_t i, const LayerSpec& s, const Shape& in) {
  auto fail = [&](const std::string& why) {
    throw ShapeError(layer_name(i, s) + ": " + why + ", got input " + shape_string(in));
  };
  switch (s.kind) {
    case LayerKind::dense:
      if (s.in_features <= 0 || s.out_features <= 0) fail("feature counts must be positive");
      if (in != Shape{s.in_features}) fail("expects input [" + std::to_string(s.in_features) + "]");
      return {s.out_features};
    case LayerKind::conv2d: {
      if (s.kernel <= 0 || s.in_channels <= 0 || s.out_channels <= 0) {
        fail("kernel and channel counts must be positive");
      }
      if (in.size() != 3 || in[0] != s.in_channels) {
        fail("expects input [" + std::to_string(s.in_channels) + ",H,W]");
      }
      const Index ho = in[1] + pad_total(s) - s.kernel + 1;
      const Index wo = in[2] + pad_total(s) - s.kernel + 1;
      if (ho <= 0 || wo <= 0) fail("kernel larger than padded input");
      return {s.out_channels, ho, wo};
    }
    case LayerKind::maxpool2d:
      if (s.pool <= 0) fail("pool size must be positive");
      if (in.size() != 3 || in[1] < s.pool || in[2] < s.pool) fail("expects input [C,H,W] with H,W >= pool");
      return {in[0], in[1] / s.pool, in[2] / s.pool};
    case LayerKind::relu:
      return in;
    case LayerKind::flatten:
      return {shape_size(in)};
  }
  fail("unknown layer kind");
  return {};
}

Shape with_batch(Index batch, const Shape& per_sample) {
  Shape s{batch};
  s.insert(s.end(), per_sample.begin(), per_sample.end());
  return s;
}

template <typename Scalar>
using ConstMap = Eigen::Map<const RowMatrix<Scalar>>;
template <typename Scalar>
using MutMap = Eigen::Map<RowMatrix<Scalar>>;

/// Unrolls one [C,H,W] sample into [C*k*k, Ho*Wo] patch columns.
template <typename Scalar>
void im2col(const Scalar* in, const Shape& in_shape, const Shape& out_shape, const LayerSpec& s,
            RowMatrix<Scalar>& cols) {
  const Index c_in = in_shape[0], h = in_shape[1], w = in_shape[2];
  const Index ho = out_shape[1], wo = out_shape[2], k = s.kernel, lead = pad_lead(s);
  cols.resize(c_in * k * k, ho * wo);
  for (Index c = 0; c < c_in; ++c) {
    for (Index ki = 0; ki < k; ++ki) {
      for (Index kj = 0; kj < k; ++kj) {
        Scalar* row = cols.row((c * k + ki) * k + kj).data();
        for (Index oy = 0; oy < ho; ++oy) {
          const Index iy = oy + ki - lead;
          for (Index ox = 0; ox < wo; ++ox) {
            const Index ix = ox + kj - lead;
            row[oy * wo + ox] =
                (iy >= 0 && iy < h && ix >= 0 && ix < w) ? in[(c * h + iy) * w + ix] : Scalar(0);
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im_add(const RowMatrix<Scalar>& cols, const Shape& in_shape, const Shape& out_shape,
                const LayerSpec& s, Scalar* grad_in) {
  const Index c_in = in_shape[0], h = in_shape[1], w = in_shape[2];
  const Index ho = out_shape[1], wo = out_shape[2], k = s.kernel, lead = pad_lead(s);
  for (Index c = 0; c < c_in; ++c) {
    for (Index ki = 0; ki < k; ++ki) {
      for (Index kj = 0; kj < k; ++kj) {
        const Scalar* row = cols.row((c * k + ki) * k + kj).data();
        for (Index oy = 0; oy < ho; ++oy) {
          const Index iy = oy + ki - lead;
          if (iy < 0 || iy >= h) continue;
          for (Index ox = 0; ox < wo; ++ox) {
            const Index ix = ox + kj - lead;
            if (ix >= 0 && ix < w) grad_in[(c * h + iy) * w + ix] += row[oy * wo + ox];
          }
        }
      }
    }
  }
}

template <typename Scalar>
Tensor<Scalar> layer_forward(const Layer<Scalar>& layer, const Tensor<Scalar>& x,
                             std::vector<Index>* pool_argmax) {
  const Index batch = x.dim(0);
  const LayerSpec& s = layer.spec;
  Tensor<Scalar> y(with_batch(batch, layer.out_shape));
  switch (s.kind) {
    case LayerKind::dense: {
      const auto& w = layer.params[0].value;
      const auto& b = layer.params[1].value;
      y.matrix() = x.matrix() * w.matrix().transpose();
      y.matrix().rowwise() += b.flat().transpose();
      break;
    }
    case LayerKind::conv2d: {
      const Index in_size = shape_size(layer.in_shape);
      const Index spatial = layer.out_shape[1] * layer.out_shape[2];
      ConstMap<Scalar> w(layer.params[0].value.data(), s.out_channels, s.in_channels * s.kernel * s.kernel);
      const auto& b = layer.params[1].value.flat();
      RowMatrix<Scalar> cols;
      for (Index n = 0; n < batch; ++n) {
        im2col(x.data() + n * in_size, layer.in_shape, layer.out_shape, s, cols);
        MutMap<Scalar> out(y.data() + n * s.out_channels * spatial, s.out_channels, spatial);
        out.noalias() = w * cols;
        out.colwise() += b;
      }
      break;
    }
    case LayerKind::maxpool2d: {
      const Index c = layer.in_shape[0], h = layer.in_shape[1], w = layer.in_shape[2];
      const Index ho = layer.out_shape[1], wo = layer.out_shape[2], p = s.pool;
      if (pool_argmax) pool_argmax->assign(static_cast<std::size_t>(y.size()), 0);
      Index o = 0;
      for (Index n = 0; n < batch; ++n) {
        for (Index ch = 0; ch < c; ++ch) {
          const Index base = (n * c + ch) * h * w;
          for (Index oy = 0; oy < ho; ++oy) {
            for (Index ox = 0; ox < wo; ++ox, ++o) {
              Index best = base + (oy * p) * w + ox * p;
              for (Index dy = 0; dy < p; ++dy) {
                for (Index dx = 0; dx < p; ++dx) {
                  const Index idx = base + (oy * p + dy) * w + ox * p + dx;
                  if (x[idx] > x[best]) best = idx;
                }
              }
              y[o] = x[best];
              if (pool_argmax) (*pool_argmax)[static_cast<std::size_t>(o)] = best;
            }
          }
        }
      }
      break;
    }
    case LayerKind::relu:
      y.flat() = x.flat().cwiseMax(Scalar(0));
      break;
    case LayerKind::flatten:
      y.flat() = x.flat();
      break;
  }
  return y;
}

template <typename Scalar>
ForwardResult<Scalar> run_forward(const Network<Scalar>& net, const Tensor<Scalar>& batch,
                                  typename Network<Scalar>::Tape* tape) {
  const auto& layers = net.layers();
  if (layers.empty()) throw ShapeError("forward: network has no layers");
  if (batch.rank() < 1 ||
      Shape(batch.shape().begin() + 1, batch.shape().end()) != net.input_shape()) {
    throw ShapeError("forward: " + layer_name(0, layers[0].spec) + " expects batch [B," +
                     shape_string(net.input_shape()).substr(1) + ", got " + shape_string(batch.shape()));
  }
  Tensor<Scalar> x = batch;
  if (net.input_mean().size() > 0) {
    const Index channels = net.input_shape()[0];
    const Index stride = shape_size(net.input_shape()) / channels;
    for (Index n = 0; n < x.dim(0); ++n) {
      for (Index c = 0; c < channels; ++c) {
        auto seg = x.flat().segment((n * channels + c) * stride, stride);
        seg.array() = (seg.array() - net.input_mean()[c]) / net.input_std()[c];
      }
    }
  }
  if (tape) {
    tape->input = x;
    tape->layer_inputs.clear();
    tape->pool_argmax.assign(layers.size(), {});
  }
  ForwardResult<Scalar> result;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    Tensor<Scalar> y = layer_forward(layers[i], x, tape ? &tape->pool_argmax[i] : nullptr);
    if (tape) tape->layer_inputs.push_back(std::move(x));
    if (static_cast<Index>(i) == net.embedding_tap()) {
      result.embeddings = y.reshaped({y.dim(0), shape_size(layers[i].out_shape)});
    }
    x = std::move(y);
  }
  result.logits = std::move(x);
  return result;
}

}  // namespace

template <typename Scalar>
Network<Scalar>::Network(Shape input_shape, const std::vector<LayerSpec>& specs, Index embedding_tap)
    : input_shape_(std::move(input_shape)), embedding_tap_(embedding_tap) {
  if (specs.empty()) throw ShapeError("network needs at least one layer");
  if (embedding_tap < 0 || embedding_tap >= static_cast<Index>(specs.size())) {
    throw ShapeError("embedding tap " + std::to_string(embedding_tap) + " outside layer range");
  }
  Shape shape = input_shape_;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    Layer<Scalar> layer;
    layer.spec = specs[i];
    layer.in_shape = shape;
    layer.out_shape = output_shape(i, specs[i], shape);
    if (specs[i].kind == LayerKind::dense) {
      layer.params.emplace_back(Shape{specs[i].out_features, specs[i].in_features});
      layer.params.emplace_back(Shape{specs[i].out_features});
    } else if (specs[i].kind == LayerKind::conv2d) {
      const auto& s = specs[i];
      layer.params.emplace_back(Shape{s.out_channels, s.in_channels, s.kernel, s.kernel});
      layer.params.emplace_back(Shape{s.out_channels});
    }
    shape = layer.out_shape;
    layers_.push_back(std::move(layer));
  }
  if (shape.size() != 1) {
    throw ShapeError("final layer must produce [C] logits, got " + shape_string(shape));
  }
}

template <typename Scalar>
void Network<Scalar>::init(Rng& rng) {
  for (auto& layer : layers_) {
    if (layer.params.empty()) continue;
    const auto& s = layer.spec;
    const Index fan_in = s.kind == LayerKind::dense ? s.in_features : s.in_channels * s.kernel * s.kernel;
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    auto& w = layer.params[0].value;
    for (Index i = 0; i < w.size(); ++i) w[i] = static_cast<Scalar>((2.0 * rng.uniform() - 1.0) * bound);
    layer.params[1].value.flat().setZero();
    for (auto& p : layer.params) {
      p.grad.flat().setZero();
      p.velocity.flat().setZero();
    }
  }
  tape_.reset();
}

template <typename Scalar>
Index Network<Scalar>::num_classes() const {
  return layers_.empty() ? 0 : layers_.back().out_shape[0];
}

template <typename Scalar>
Index Network<Scalar>::embedding_dim() const {
  return shape_size(layers_.at(static_cast<std::size_t>(embedding_tap_)).out_shape);
}

template <typename Scalar>
std::vector<LayerSpec> Network<Scalar>::specs() const {
  std::vector<LayerSpec> out;
  for (const auto& l : layers_) out.push_back(l.spec);
  return out;
}

template <typename Scalar>
void Network<Scalar>::set_input_normalization(Vector<Scalar> mean, Vector<Scalar> stddev) {
  if (mean.size() != stddev.size()) throw ShapeError("normalization mean/std length mismatch");
  if (mean.size() > 0) {
    if (input_shape_.empty() || mean.size() != input_shape_[0]) {
      throw ShapeError("normalization needs one entry per input channel");
    }
    if ((stddev.array() <= 0).any()) throw ValueError("normalization std must be positive");
  }
  input_mean_ = std::move(mean);
  input_std_ = std::move(stddev);
}

template <typename Scalar>
Index Network<Scalar>::parameter_count() const {
  Index n = 0;
  for (const auto& l : layers_) {
    for (const auto& p : l.params) n += p.value.size();
  }
  return n;
}

template <typename Scalar>
Vector<Scalar> Network<Scalar>::parameters() const {
  Vector<Scalar> flat(parameter_count());
  Index o = 0;
  for (const auto& l : layers_) {
    for (const auto& p : l.params) {
      flat.segment(o, p.value.size()) = p.value.flat();
      o += p.value.size();
    }
  }
  return flat;
}

template <typename Scalar>
Vector<Scalar> Network<Scalar>::gradients() const {
  Vector<Scalar> flat(parameter_count());
  Index o = 0;
  for (const auto& l : layers_) {
    for (const auto& p : l.params) {
      flat.segment(o, p.grad.size()) = p.grad.flat();
      o += p.grad.size();
    }
  }
  return flat;
}

template <typename Scalar>
void Network<Scalar>::set_parameters(const Vector<Scalar>& flat) {
  if (flat.size() != parameter_count()) {
    throw ShapeError("set_parameters: expected " + std::to_string(parameter_count()) + " values, got " +
                     std::to_string(flat.size()));
  }
  Index o = 0;
  for (auto& l : layers_) {
    for (auto& p : l.params) {
      p.value.flat() = flat.segment(o, p.value.size());
      o += p.value.size();
    }
  }
}

template <typename Scalar>
ForwardResult<Scalar> forward(const Network<Scalar>& net, const Tensor<Scalar>& batch) {
  return run_forward<Scalar>(net, batch, nullptr);
}

template <typename Scalar>
ForwardResult<Scalar> forward_record(Network<Scalar>& net, const Tensor<Scalar>& batch) {
  typename Network<Scalar>::Tape tape;
  auto result = run_forward<Scalar>(net, batch, &tape);
  net.tape() = std::move(tape);
  return result;
}

template <typename Scalar>
void backward(Network<Scalar>& net, const Tensor<Scalar>& grad_logits) {
  if (!net.tape()) throw Error("backward: no recorded forward pass");
  const auto& tape = *net.tape();
  auto& layers = net.layers();
  const Index batch = tape.input.dim(0);
  if (grad_logits.shape() != with_batch(batch, layers.back().out_shape)) {
    throw ShapeError("backward: gradient shape " + shape_string(grad_logits.shape()) +
                     " does not match logits " + shape_string(with_batch(batch, layers.back().out_shape)));
  }
  Tensor<Scalar> g = grad_logits;
  for (std::size_t ii = layers.size(); ii-- > 0;) {
    auto& layer = layers[ii];
    const auto& s = layer.spec;
    const Tensor<Scalar>& x = tape.layer_inputs[ii];
    Tensor<Scalar> gx(x.shape());
    switch (s.kind) {
      case LayerKind::dense: {
        auto& w = layer.params[0];
        auto& b = layer.params[1];
        w.grad.matrix().noalias() = g.matrix().transpose() * x.matrix();
        b.grad.flat() = g.matrix().colwise().sum().transpose();
        if (ii > 0) gx.matrix().noalias() = g.matrix() * w.value.matrix();
        break;
      }
      case LayerKind::conv2d: {
        const Index kk = s.in_channels * s.kernel * s.kernel;
        const Index spatial = layer.out_shape[1] * layer.out_shape[2];
        const Index in_size = shape_size(layer.in_shape);
        MutMap<Scalar> gw(layer.params[0].grad.data(), s.out_channels, kk);
        ConstMap<Scalar> w(layer.params[0].value.data(), s.out_channels, kk);
        auto& gb = layer.params[1].grad.flat();
        gw.setZero();
        gb.setZero();
        RowMatrix<Scalar> cols, gcols;
        for (Index n = 0; n < batch; ++n) {
          ConstMap<Scalar> gy(g.data() + n * s.out_channels * spatial, s.out_channels, spatial);
          im2col(x.data() + n * in_size, layer.in_shape, layer.out_shape, s, cols);
          gw.noalias() += gy * cols.transpose();
          gb += gy.rowwise().sum();
          if (ii > 0) {
            gcols.noalias() = w.transpose() * gy;
            col2im_add(gcols, layer.in_shape, layer.out_shape, s, gx.data() + n * in_size);
          }
        }
        break;
      }
      case LayerKind::maxpool2d: {
        const auto& idx = tape.pool_argmax[ii];
        for (Index o = 0; o < g.size(); ++o) gx[idx[static_cast<std::size_t>(o)]] += g[o];
        break;
      }
      case LayerKind::relu:
        gx.flat() = (x.flat().array() > Scalar(0)).select(g.flat(), Scalar(0));
        break;
      case LayerKind::flatten:
        gx.flat() = g.flat();
        break;
    }
    g = std::move(gx);
  }
}

template <typename Scalar>
void sgd_step(Network<Scalar>& net, const SgdOptions& o) {
  if (!(o.lr >= 0) || !std::isfinite(o.lr)) throw ValueError("sgd_step: lr must be >= 0, got " + std::to_string(o.lr));
  if (!(o.momentum >= 0 && o.momentum < 1)) throw ValueError("sgd_step: momentum must be in [0,1)");
  if (!(o.weight_decay >= 0)) throw ValueError("sgd_step: weight_decay must be >= 0");
  const auto lr = static_cast<Scalar>(o.lr);
  const auto mu = static_cast<Scalar>(o.momentum);
  const auto wd = static_cast<Scalar>(o.weight_decay);
  for (auto& layer : net.layers()) {
    for (auto& p : layer.params) {
      p.velocity.flat() = mu * p.velocity.flat() + p.grad.flat();
      if (wd != 0) {
        p.value.flat() -= lr * (p.velocity.flat() + wd * p.value.flat());
      } else {
        p.value.flat() -= lr * p.velocity.flat();
      }
    }
  }
}

template <typename Scalar>
Network<Scalar> build_network(const ArchSpec& arch, const Shape& input_shape, Index num_classes) {
  if (input_shape.size() != 3) throw ShapeError("build_network: expects [C,H,W] input shape");
  const Index c = input_shape[0], h = input_shape[1], w = input_shape[2];
  std::vector<LayerSpec> layers;
  Index tap = 0;
  if (arch.kind == "cnn") {
    // conv-relu-pool x2, then two dense layers; embedding after the hidden dense.
    layers = {LayerSpec::conv2d(c, arch.conv1, 3, Padding::same), LayerSpec::relu(), LayerSpec::maxpool2d(2),
              LayerSpec::conv2d(arch.conv1, arch.conv2, 3, Padding::same), LayerSpec::relu(),
              LayerSpec::maxpool2d(2), LayerSpec::flatten(),
              LayerSpec::dense(arch.conv2 * (h / 2 / 2) * (w / 2 / 2), arch.hidden), LayerSpec::relu(),
              LayerSpec::dense(arch.hidden, num_classes)};
    tap = 8;
  } else if (arch.kind == "lenet") {
    layers = {LayerSpec::conv2d(c, arch.conv1, 3, Padding::valid), LayerSpec::relu(), LayerSpec::maxpool2d(2),
              LayerSpec::flatten(), LayerSpec::dense(arch.conv1 * ((h - 2) / 2) * ((w - 2) / 2), arch.hidden),
              LayerSpec::relu(), LayerSpec::dense(arch.hidden, num_classes)};
    tap = 5;
  } else if (arch.kind == "mlp") {
    layers = {LayerSpec::flatten(), LayerSpec::dense(c * h * w, arch.hidden), LayerSpec::relu(),
              LayerSpec::dense(arch.hidden, num_classes)};
    tap = 2;
  } else if (arch.kind == "linear") {
    layers = {LayerSpec::flatten(), LayerSpec::dense(c * h * w, num_classes)};
    tap = 0;
  } else {
    throw ValueError("unknown architecture '" + arch.kind + "'");
  }
  return Network<Scalar>(input_shape, layers, tap);
}

#define DLAB_INSTANTIATE_NN(S)                                                          \
  template class Network<S>;                                                            \
  template ForwardResult<S> forward(const Network<S>&, const Tensor<S>&);               \
  template ForwardResult<S> forward_record(Network<S>&, const Tensor<S>&);              \
  template void backward(Network<S>&, const Tensor<S>&);                                \
  template void sgd_step(Network<S>&, const SgdOptions&);                               \
  template Network<S> build_network(const ArchSpec&, const Shape&, Index);

DLAB_INSTANTIATE_NN(float)
DLAB_INSTANTIATE_NN(double)

}  // namespace dlab
