#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "soco/errors.hpp"
#include "soco/geometry.hpp"
#include "soco/tensor.hpp"

namespace soco {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using ConstMapRM = Eigen::Map<const MatRM>;

class Graph;

// Handle to a node in a Graph. Cheap to copy; outputs of ops are Values.
struct Value {
  Graph* graph = nullptr;
  int id = -1;
  bool valid() const { return graph != nullptr && id >= 0; }
  const Tensor& val() const;
};

// Region of interest for roi_align: which batch element, and a center-format
// box in the pixel coordinates of the view the feature map was computed from.
struct RoiSpec {
  int64_t batch = 0;
  BBox box;
};

// Dynamic computation graph recording one forward pass. Nodes are appended in
// execution order, which is a topological order by construction; backward
// walks them once in reverse. A non-recording graph computes values only and
// refuses backward(), which is how target-network evaluations are guaranteed
// to never accumulate gradients.
class Graph {
 public:
  struct Node {
    Tensor value;
    Tensor grad;  // empty until touched by backward
    std::vector<int> inputs;
    std::function<void(Graph&, int)> backfn;
    int param_id = -1;
  };

  explicit Graph(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }
  int size() const { return static_cast<int>(nodes_.size()); }

  Value input(Tensor v) { return make_leaf(std::move(v), -1); }

  // Parameter leaf: snapshots the tensor; gradients are collected per
  // param_id after backward. Ids must be unique per parameter tensor.
  Value param(const Tensor& p, int param_id) { return make_leaf(p, param_id); }

  Value emit(Tensor out, std::vector<int> inputs, std::function<void(Graph&, int)> backfn) {
    if (!out.all_finite())
      throw NumericError("op produced a non-finite value, shape " + out.shape_str());
    Node n;
    n.value = std::move(out);
    if (recording_) {
      n.inputs = std::move(inputs);
      n.backfn = std::move(backfn);
    }
    nodes_.push_back(std::move(n));
    return Value{this, static_cast<int>(nodes_.size()) - 1};
  }

  const Tensor& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
  const Tensor& value(Value v) const { return value(v.id); }

  // Gradient buffer for a node, allocated zeros on first touch.
  Tensor& grad_buf(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.shape.empty()) n.grad = Tensor::zeros(n.value.shape);
    return n.grad;
  }
  const Tensor& grad(Value v) const { return nodes_[static_cast<size_t>(v.id)].grad; }
  bool has_grad(int id) const { return !nodes_[static_cast<size_t>(id)].grad.shape.empty(); }

  // Reverse-mode sweep from a scalar loss. Restartable: gradients are reset
  // first, so running it twice gives identical results.
  void backward(Value loss) {
    check_input(recording_, "backward: graph was built in no-grad mode");
    check_input(loss.graph == this, "backward: loss from a different graph");
    check_input(value(loss).numel() == 1, "backward: loss must be scalar");
    for (Node& n : nodes_) n.grad = Tensor{};
    grad_buf(loss.id)[0] = 1.0;
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      if (n.grad.shape.empty() || !n.backfn) continue;
      n.backfn(*this, id);
    }
  }

  // Accumulated gradient per param_id (zeros if the parameter was unused).
  std::map<int, Tensor> param_grads() const {
    std::map<int, Tensor> out;
    for (const Node& n : nodes_) {
      if (n.param_id < 0) continue;
      Tensor g = n.grad.shape.empty() ? Tensor::zeros(n.value.shape) : n.grad;
      auto it = out.find(n.param_id);
      if (it == out.end()) {
        out.emplace(n.param_id, std::move(g));
      } else {
        for (int64_t i = 0; i < g.numel(); ++i) it->second[i] += g[i];
      }
    }
    return out;
  }

 private:
  Value make_leaf(Tensor v, int param_id) {
    Node n;
    n.value = std::move(v);
    n.param_id = param_id;
    nodes_.push_back(std::move(n));
    return Value{this, static_cast<int>(nodes_.size()) - 1};
  }

  bool recording_;
  std::vector<Node> nodes_;
};

inline const Tensor& Value::val() const { return graph->value(id); }

namespace detail {
inline void accumulate(Tensor& dst, const Tensor& src) {
  for (int64_t i = 0; i < dst.numel(); ++i) dst[i] += src[i];
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and reduction ops
// ---------------------------------------------------------------------------

inline Value add(Value a, Value b) {
  check_input(a.val().same_shape(b.val()), "add: shape mismatch " + a.val().shape_str() + " vs " + b.val().shape_str());
  Tensor out = a.val();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += b.val()[i];
  int ia = a.id, ib = b.id;
  return a.graph->emit(std::move(out), {ia, ib}, [ia, ib](Graph& g, int id) {
    detail::accumulate(g.grad_buf(ia), g.grad_buf(id));
    detail::accumulate(g.grad_buf(ib), g.grad_buf(id));
  });
}

inline Value sub(Value a, Value b) {
  check_input(a.val().same_shape(b.val()), "sub: shape mismatch");
  Tensor out = a.val();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] -= b.val()[i];
  int ia = a.id, ib = b.id;
  return a.graph->emit(std::move(out), {ia, ib}, [ia, ib](Graph& g, int id) {
    const Tensor& gy = g.grad_buf(id);
    detail::accumulate(g.grad_buf(ia), gy);
    Tensor& gb = g.grad_buf(ib);
    for (int64_t i = 0; i < gb.numel(); ++i) gb[i] -= gy[i];
  });
}

inline Value mul(Value a, Value b) {
  check_input(a.val().same_shape(b.val()), "mul: shape mismatch");
  Tensor out = a.val();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= b.val()[i];
  int ia = a.id, ib = b.id;
  return a.graph->emit(std::move(out), {ia, ib}, [ia, ib](Graph& g, int id) {
    const Tensor& gy = g.grad_buf(id);
    Tensor& ga = g.grad_buf(ia);
    Tensor& gb = g.grad_buf(ib);
    const Tensor& av = g.value(ia);
    const Tensor& bv = g.value(ib);
    for (int64_t i = 0; i < gy.numel(); ++i) {
      ga[i] += gy[i] * bv[i];
      gb[i] += gy[i] * av[i];
    }
  });
}

inline Value scale(Value a, double c) {
  Tensor out = a.val();
  for (double& v : out.data) v *= c;
  int ia = a.id;
  return a.graph->emit(std::move(out), {ia}, [ia, c](Graph& g, int id) {
    const Tensor& gy = g.grad_buf(id);
    Tensor& ga = g.grad_buf(ia);
    for (int64_t i = 0; i < gy.numel(); ++i) ga[i] += c * gy[i];
  });
}

inline Value add_scalar(Value a, double c) {
  Tensor out = a.val();
  for (double& v : out.data) v += c;
  int ia = a.id;
  return a.graph->emit(std::move(out), {ia}, [ia](Graph& g, int id) {
    detail::accumulate(g.grad_buf(ia), g.grad_buf(id));
  });
}

inline Value relu(Value a) {
  Tensor out = a.val();
  for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  int ia = a.id;
  return a.graph->emit(std::move(out), {ia}, [ia](Graph& g, int id) {
    const Tensor& gy = g.grad_buf(id);
    const Tensor& x = g.value(ia);
    Tensor& ga = g.grad_buf(ia);
    for (int64_t i = 0; i < gy.numel(); ++i)
      if (x[i] > 0.0) ga[i] += gy[i];
  });
}

inline Value sum_all(Value a) {
  double s = 0.0;
  for (double v : a.val().data) s += v;
  int ia = a.id;
  return a.graph->emit(Tensor::scalar(s), {ia}, [ia](Graph& g, int id) {
    double gy = g.grad_buf(id)[0];
    Tensor& ga = g.grad_buf(ia);
    for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += gy;
  });
}

inline Value mean_all(Value a) {
  int64_t n = a.val().numel();
  double s = 0.0;
  for (double v : a.val().data) s += v;
  int ia = a.id;
  return a.graph->emit(Tensor::scalar(s / static_cast<double>(n)), {ia}, [ia, n](Graph& g, int id) {
    double gy = g.grad_buf(id)[0] / static_cast<double>(n);
    Tensor& ga = g.grad_buf(ia);
    for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += gy;
  });
}

// Rowwise dot product of two (M, D) tensors -> (M).
inline Value row_dot(Value a, Value b) {
  const Tensor& av = a.val();
  const Tensor& bv = b.val();
  check_input(av.rank() == 2 && av.same_shape(bv), "row_dot: need matching (M,D) tensors");
  int64_t m = av.shape[0], d = av.shape[1];
  Tensor out({m});
  for (int64_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (int64_t j = 0; j < d; ++j) s += av.at(i, j) * bv.at(i, j);
    out[i] = s;
  }
  int ia = a.id, ib = b.id;
  return a.graph->emit(std::move(out), {ia, ib}, [ia, ib, m, d](Graph& g, int id) {
    const Tensor& gy = g.grad_buf(id);
    const Tensor& av = g.value(ia);
    const Tensor& bv = g.value(ib);
    Tensor& ga = g.grad_buf(ia);
    Tensor& gb = g.grad_buf(ib);
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < d; ++j) {
        ga.at(i, j) += gy[i] * bv.at(i, j);
        gb.at(i, j) += gy[i] * av.at(i, j);
      }
  });
}

inline Value reshape(Value a, std::vector<int64_t> shape) {
  check_input(Tensor::count(shape) == a.val().numel(), "reshape: element count mismatch");
  Tensor out = a.val();
  out.shape = shape;
  int ia = a.id;
  return a.graph->emit(std::move(out), {ia}, [ia](Graph& g, int id) {
    detail::accumulate(g.grad_buf(ia), g.grad_buf(id));
  });
}

// Normalizes slices along `axis` by max(their L2 norm, 1e-12).
inline Value l2_normalize(Value a, int axis) {
  const Tensor& x = a.val();
  check_input(axis >= 0 && axis < x.rank(), "l2_normalize: bad axis");
  const double floor = 1e-12;
  int64_t axis_len = x.shape[static_cast<size_t>(axis)];
  int64_t inner = 1, outer = 1;
  for (int i = axis + 1; i < x.rank(); ++i) inner *= x.shape[static_cast<size_t>(i)];
  for (int i = 0; i < axis; ++i) outer *= x.shape[static_cast<size_t>(i)];

  Tensor out = x;
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t i = 0; i < inner; ++i) {
      double s = 0.0;
      for (int64_t k = 0; k < axis_len; ++k) {
        double v = x[(o * axis_len + k) * inner + i];
        s += v * v;
      }
      double n = std::max(std::sqrt(s), floor);
      for (int64_t k = 0; k < axis_len; ++k) out[(o * axis_len + k) * inner + i] /= n;
    }
  int ia = a.id;
  return a.graph->emit(std::move(out), {ia}, [ia, outer, inner, axis_len, floor](Graph& g, int id) {
    const Tensor& gy = g.grad_buf(id);
    const Tensor& x = g.value(ia);
    Tensor& gx = g.grad_buf(ia);
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t i = 0; i < inner; ++i) {
        double s = 0.0;
        for (int64_t k = 0; k < axis_len; ++k) {
          double v = x[(o * axis_len + k) * inner + i];
          s += v * v;
        }
        double n = std::sqrt(s);
        if (n > floor) {
          double xg = 0.0;
          for (int64_t k = 0; k < axis_len; ++k) {
            int64_t idx = (o * axis_len + k) * inner + i;
            xg += x[idx] * gy[idx];
          }
          double n3 = n * n * n;
          for (int64_t k = 0; k < axis_len; ++k) {
            int64_t idx = (o * axis_len + k) * inner + i;
            gx[idx] += gy[idx] / n - x[idx] * xg / n3;
          }
        } else {
          for (int64_t k = 0; k < axis_len; ++k) {
            int64_t idx = (o * axis_len + k) * inner + i;
            gx[idx] += gy[idx] / floor;
          }
        }
      }
  });
}

// ---------------------------------------------------------------------------
// Dense layers
// ---------------------------------------------------------------------------

// y = x W^T + b with x (N, Din), W (Dout, Din), b (Dout). Pass an invalid
// Value to skip the bias.
inline Value linear(Value x, Value w, Value b) {
  const Tensor& xv = x.val();
  const Tensor& wv = w.val();
  check_input(xv.rank() == 2 && wv.rank() == 2 && xv.shape[1] == wv.shape[1],
              "linear: shape mismatch " + xv.shape_str() + " vs " + wv.shape_str());
  int64_t n = xv.shape[0], din = xv.shape[1], dout = wv.shape[0];
  Tensor out({n, dout});
  {
    ConstMapRM xm(xv.data.data(), n, din);
    ConstMapRM wm(wv.data.data(), dout, din);
    MapRM om(out.data.data(), n, dout);
    om.noalias() = xm * wm.transpose();
  }
  if (b.valid()) {
    check_input(b.val().numel() == dout, "linear: bias size mismatch");
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < dout; ++j) out.at(i, j) += b.val()[j];
  }
  int ix = x.id, iw = w.id, ib = b.valid() ? b.id : -1;
  std::vector<int> inputs = {ix, iw};
  if (ib >= 0) inputs.push_back(ib);
  return x.graph->emit(std::move(out), std::move(inputs), [ix, iw, ib, n, din, dout](Graph& g, int id) {
    const Tensor& gy = g.grad_buf(id);
    ConstMapRM gym(gy.data.data(), n, dout);
    ConstMapRM xm(g.value(ix).data.data(), n, din);
    ConstMapRM wm(g.value(iw).data.data(), dout, din);
    MapRM gxm(g.grad_buf(ix).data.data(), n, din);
    MapRM gwm(g.grad_buf(iw).data.data(), dout, din);
    gxm.noalias() += gym * wm;
    gwm.noalias() += gym.transpose() * xm;
    if (ib >= 0) {
      Tensor& gb = g.grad_buf(ib);
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < dout; ++j) gb[j] += gy.at(i, j);
    }
  });
}

// ---------------------------------------------------------------------------
// Convolution (im2col + GEMM)
// ---------------------------------------------------------------------------

namespace detail {

struct ConvDims {
  int64_t n, cin, h, w, cout, kh, kw, ho, wo;
  int64_t stride, pad;
};

inline ConvDims conv_dims(const Tensor& x, const Tensor& w, int64_t stride, int64_t pad) {
  check_input(x.rank() == 4 && w.rank() == 4, "conv2d: need (N,Cin,H,W) and (Cout,Cin,kh,kw)");
  check_input(x.shape[1] == w.shape[1], "conv2d: channel mismatch");
  check_input(stride >= 1 && pad >= 0, "conv2d: bad stride/pad");
  ConvDims d;
  d.n = x.shape[0];
  d.cin = x.shape[1];
  d.h = x.shape[2];
  d.w = x.shape[3];
  d.cout = w.shape[0];
  d.kh = w.shape[2];
  d.kw = w.shape[3];
  d.stride = stride;
  d.pad = pad;
  d.ho = (d.h + 2 * pad - d.kh) / stride + 1;
  d.wo = (d.w + 2 * pad - d.kw) / stride + 1;
  check_input(d.ho >= 1 && d.wo >= 1, "conv2d: kernel larger than padded input");
  return d;
}

// col is (cin*kh*kw, ho*wo) row-major for one image.
inline void im2col(const Tensor& x, int64_t img, const ConvDims& d, std::vector<double>& col) {
  col.assign(static_cast<size_t>(d.cin * d.kh * d.kw * d.ho * d.wo), 0.0);
  int64_t spatial = d.ho * d.wo;
  for (int64_t c = 0; c < d.cin; ++c)
    for (int64_t ky = 0; ky < d.kh; ++ky)
      for (int64_t kx = 0; kx < d.kw; ++kx) {
        int64_t row = (c * d.kh + ky) * d.kw + kx;
        double* dst = col.data() + row * spatial;
        for (int64_t oy = 0; oy < d.ho; ++oy) {
          int64_t iy = oy * d.stride + ky - d.pad;
          if (iy < 0 || iy >= d.h) continue;
          for (int64_t ox = 0; ox < d.wo; ++ox) {
            int64_t ix = ox * d.stride + kx - d.pad;
            if (ix < 0 || ix >= d.w) continue;
            dst[oy * d.wo + ox] = x.at(img, c, iy, ix);
          }
        }
      }
}

inline void col2im_accumulate(const std::vector<double>& col, int64_t img, const ConvDims& d,
                              Tensor& gx) {
  int64_t spatial = d.ho * d.wo;
  for (int64_t c = 0; c < d.cin; ++c)
    for (int64_t ky = 0; ky < d.kh; ++ky)
      for (int64_t kx = 0; kx < d.kw; ++kx) {
        int64_t row = (c * d.kh + ky) * d.kw + kx;
        const double* src = col.data() + row * spatial;
        for (int64_t oy = 0; oy < d.ho; ++oy) {
          int64_t iy = oy * d.stride + ky - d.pad;
          if (iy < 0 || iy >= d.h) continue;
          for (int64_t ox = 0; ox < d.wo; ++ox) {
            int64_t ix = ox * d.stride + kx - d.pad;
            if (ix < 0 || ix >= d.w) continue;
            gx.at(img, c, iy, ix) += src[oy * d.wo + ox];
          }
        }
      }
}

}  // namespace detail

inline Value conv2d(Value x, Value w, Value b, int64_t stride, int64_t pad) {
  detail::ConvDims d = detail::conv_dims(x.val(), w.val(), stride, pad);
  Tensor out({d.n, d.cout, d.ho, d.wo});
  std::vector<double> col;
  {
    ConstMapRM wm(w.val().data.data(), d.cout, d.cin * d.kh * d.kw);
    for (int64_t img = 0; img < d.n; ++img) {
      detail::im2col(x.val(), img, d, col);
      ConstMapRM cm(col.data(), d.cin * d.kh * d.kw, d.ho * d.wo);
      MapRM om(out.data.data() + img * d.cout * d.ho * d.wo, d.cout, d.ho * d.wo);
      om.noalias() = wm * cm;
    }
  }
  if (b.valid()) {
    check_input(b.val().numel() == d.cout, "conv2d: bias size mismatch");
    for (int64_t img = 0; img < d.n; ++img)
      for (int64_t c = 0; c < d.cout; ++c) {
        double bias = b.val()[c];
        double* p = out.data.data() + (img * d.cout + c) * d.ho * d.wo;
        for (int64_t i = 0; i < d.ho * d.wo; ++i) p[i] += bias;
      }
  }
  int ix = x.id, iw = w.id, ib = b.valid() ? b.id : -1;
  std::vector<int> inputs = {ix, iw};
  if (ib >= 0) inputs.push_back(ib);
  return x.graph->emit(std::move(out), std::move(inputs), [ix, iw, ib, d](Graph& g, int id) {
    const Tensor& gy = g.grad_buf(id);
    Tensor& gx = g.grad_buf(ix);
    Tensor& gw = g.grad_buf(iw);
    ConstMapRM wm(g.value(iw).data.data(), d.cout, d.cin * d.kh * d.kw);
    MapRM gwm(gw.data.data(), d.cout, d.cin * d.kh * d.kw);
    std::vector<double> col;
    std::vector<double> gcol(static_cast<size_t>(d.cin * d.kh * d.kw * d.ho * d.wo));
    for (int64_t img = 0; img < d.n; ++img) {
      ConstMapRM gym(gy.data.data() + img * d.cout * d.ho * d.wo, d.cout, d.ho * d.wo);
      detail::im2col(g.value(ix), img, d, col);
      ConstMapRM cm(col.data(), d.cin * d.kh * d.kw, d.ho * d.wo);
      gwm.noalias() += gym * cm.transpose();
      MapRM gcm(gcol.data(), d.cin * d.kh * d.kw, d.ho * d.wo);
      gcm.noalias() = wm.transpose() * gym;
      detail::col2im_accumulate(gcol, img, d, gx);
    }
    if (ib >= 0) {
      Tensor& gb = g.grad_buf(ib);
      for (int64_t img = 0; img < d.n; ++img)
        for (int64_t c = 0; c < d.cout; ++c) {
          const double* p = gy.data.data() + (img * d.cout + c) * d.ho * d.wo;
          double s = 0.0;
          for (int64_t i = 0; i < d.ho * d.wo; ++i) s += p[i];
          gb[c] += s;
        }
    }
  });
}

// ---------------------------------------------------------------------------
// Pooling / resampling
// ---------------------------------------------------------------------------

// 2x2 max pooling with stride 2; H and W must be even. Ties take the first
// element in scan order, so results are deterministic.
inline Value maxpool2(Value x) {
  const Tensor& xv = x.val();
  check_input(xv.rank() == 4 && xv.shape[2] % 2 == 0 && xv.shape[3] % 2 == 0,
              "maxpool2: need (N,C,H,W) with even H, W");
  int64_t n = xv.shape[0], c = xv.shape[1], h = xv.shape[2], w = xv.shape[3];
  int64_t ho = h / 2, wo = w / 2;
  Tensor out({n, c, ho, wo});
  auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(n * c * ho * wo));
  int64_t idx = 0;
  for (int64_t i = 0; i < n; ++i)
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t oy = 0; oy < ho; ++oy)
        for (int64_t ox = 0; ox < wo; ++ox, ++idx) {
          double best = -std::numeric_limits<double>::infinity();
          int64_t best_at = 0;
          for (int64_t dy = 0; dy < 2; ++dy)
            for (int64_t dx = 0; dx < 2; ++dx) {
              int64_t iy = 2 * oy + dy, ix2 = 2 * ox + dx;
              double v = xv.at(i, ch, iy, ix2);
              if (v > best) {
                best = v;
                best_at = ((i * c + ch) * h + iy) * w + ix2;
              }
            }
          out[idx] = best;
          (*argmax)[static_cast<size_t>(idx)] = best_at;
        }
  int ix = x.id;
  return x.graph->emit(std::move(out), {ix}, [ix, argmax](Graph& g, int id) {
    const Tensor& gy = g.grad_buf(id);
    Tensor& gx = g.grad_buf(ix);
    for (int64_t i = 0; i < gy.numel(); ++i) gx[(*argmax)[static_cast<size_t>(i)]] += gy[i];
  });
}

inline Value upsample_nearest2x(Value x) {
  const Tensor& xv = x.val();
  check_input(xv.rank() == 4, "upsample_nearest2x: need (N,C,H,W)");
  int64_t n = xv.shape[0], c = xv.shape[1], h = xv.shape[2], w = xv.shape[3];
  Tensor out({n, c, 2 * h, 2 * w});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t y = 0; y < 2 * h; ++y)
        for (int64_t xx = 0; xx < 2 * w; ++xx)
          out.at(i, ch, y, xx) = xv.at(i, ch, y / 2, xx / 2);
  int ix = x.id;
  return x.graph->emit(std::move(out), {ix}, [ix, n, c, h, w](Graph& g, int id) {
    const Tensor& gy = g.grad_buf(id);
    Tensor& gx = g.grad_buf(ix);
    for (int64_t i = 0; i < n; ++i)
      for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t y = 0; y < 2 * h; ++y)
          for (int64_t xx = 0; xx < 2 * w; ++xx)
            gx.at(i, ch, y / 2, xx / 2) += gy.at(i, ch, y, xx);
  });
}

inline Value global_avg_pool(Value x) {
  const Tensor& xv = x.val();
  check_input(xv.rank() == 4, "global_avg_pool: need (N,C,H,W)");
  int64_t n = xv.shape[0], c = xv.shape[1], hw = xv.shape[2] * xv.shape[3];
  Tensor out({n, c});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t ch = 0; ch < c; ++ch) {
      const double* p = xv.data.data() + (i * c + ch) * hw;
      double s = 0.0;
      for (int64_t k = 0; k < hw; ++k) s += p[k];
      out.at(i, ch) = s / static_cast<double>(hw);
    }
  int ix = x.id;
  return x.graph->emit(std::move(out), {ix}, [ix, n, c, hw](Graph& g, int id) {
    const Tensor& gy = g.grad_buf(id);
    Tensor& gx = g.grad_buf(ix);
    for (int64_t i = 0; i < n; ++i)
      for (int64_t ch = 0; ch < c; ++ch) {
        double gv = gy.at(i, ch) / static_cast<double>(hw);
        double* p = gx.data.data() + (i * c + ch) * hw;
        for (int64_t k = 0; k < hw; ++k) p[k] += gv;
      }
  });
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

// Normalizes over all axes except the channel axis (dim 1 for rank-4 inputs,
// dim 1 for rank-2). In train mode batch moments are used and, when
// update_running is set, blended into the running buffers:
// r <- (1-momentum)*r + momentum*batch_stat (biased variance throughout).
// Eval mode normalizes by the running buffers.
inline Value batchnorm(Value x, Value gamma, Value beta, Tensor& running_mean,
                       Tensor& running_var, bool train, bool update_running,
                       double momentum = 0.1, double eps = 1e-5) {
  const Tensor& xv = x.val();
  check_input(xv.rank() == 4 || xv.rank() == 2, "batchnorm: need rank 2 or 4");
  int64_t c = xv.shape[1];
  check_input(gamma.val().numel() == c && beta.val().numel() == c &&
                  running_mean.numel() == c && running_var.numel() == c,
              "batchnorm: channel mismatch");
  int64_t n = xv.shape[0];
  int64_t hw = xv.rank() == 4 ? xv.shape[2] * xv.shape[3] : 1;
  int64_t m = n * hw;  // reduction count per channel
  check_input(m >= 1, "batchnorm: empty input");

  auto xat = [&](const Tensor& t, int64_t i, int64_t ch, int64_t k) -> double {
    return t[(i * c + ch) * hw + k];
  };

  std::vector<double> mean(static_cast<size_t>(c), 0.0), var(static_cast<size_t>(c), 0.0);
  if (train) {
    for (int64_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (int64_t i = 0; i < n; ++i)
        for (int64_t k = 0; k < hw; ++k) s += xat(xv, i, ch, k);
      mean[static_cast<size_t>(ch)] = s / static_cast<double>(m);
      double v = 0.0;
      for (int64_t i = 0; i < n; ++i)
        for (int64_t k = 0; k < hw; ++k) {
          double d = xat(xv, i, ch, k) - mean[static_cast<size_t>(ch)];
          v += d * d;
        }
      var[static_cast<size_t>(ch)] = v / static_cast<double>(m);
    }
    if (update_running)
      for (int64_t ch = 0; ch < c; ++ch) {
        running_mean[ch] = (1.0 - momentum) * running_mean[ch] + momentum * mean[static_cast<size_t>(ch)];
        running_var[ch] = (1.0 - momentum) * running_var[ch] + momentum * var[static_cast<size_t>(ch)];
      }
  } else {
    for (int64_t ch = 0; ch < c; ++ch) {
      mean[static_cast<size_t>(ch)] = running_mean[ch];
      var[static_cast<size_t>(ch)] = running_var[ch];
    }
  }

  Tensor out(xv.shape);
  for (int64_t ch = 0; ch < c; ++ch) {
    double inv = 1.0 / std::sqrt(var[static_cast<size_t>(ch)] + eps);
    double gm = gamma.val()[ch], bt = beta.val()[ch];
    for (int64_t i = 0; i < n; ++i)
      for (int64_t k = 0; k < hw; ++k)
        out[(i * c + ch) * hw + k] =
            gm * (xat(xv, i, ch, k) - mean[static_cast<size_t>(ch)]) * inv + bt;
  }

  int ix = x.id, ig = gamma.id, ibt = beta.id;
  auto mean_c = std::make_shared<std::vector<double>>(std::move(mean));
  auto var_c = std::make_shared<std::vector<double>>(std::move(var));
  return x.graph->emit(std::move(out), {ix, ig, ibt},
                       [ix, ig, ibt, n, c, hw, m, eps, train, mean_c, var_c](Graph& g, int id) {
    const Tensor& gy = g.grad_buf(id);
    const Tensor& xv = g.value(ix);
    const Tensor& gamma = g.value(ig);
    Tensor& gx = g.grad_buf(ix);
    Tensor& gg = g.grad_buf(ig);
    Tensor& gb = g.grad_buf(ibt);
    for (int64_t ch = 0; ch < c; ++ch) {
      double mu = (*mean_c)[static_cast<size_t>(ch)];
      double inv = 1.0 / std::sqrt((*var_c)[static_cast<size_t>(ch)] + eps);
      double sum_gy = 0.0, sum_gy_xhat = 0.0;
      for (int64_t i = 0; i < n; ++i)
        for (int64_t k = 0; k < hw; ++k) {
          int64_t idx = (i * c + ch) * hw + k;
          double xhat = (xv[idx] - mu) * inv;
          sum_gy += gy[idx];
          sum_gy_xhat += gy[idx] * xhat;
        }
      gb[ch] += sum_gy;
      gg[ch] += sum_gy_xhat;
      double gm = gamma[ch];
      if (train) {
        double mean_gy = sum_gy / static_cast<double>(m);
        double mean_gy_xhat = sum_gy_xhat / static_cast<double>(m);
        for (int64_t i = 0; i < n; ++i)
          for (int64_t k = 0; k < hw; ++k) {
            int64_t idx = (i * c + ch) * hw + k;
            double xhat = (xv[idx] - mu) * inv;
            gx[idx] += gm * inv * (gy[idx] - mean_gy - xhat * mean_gy_xhat);
          }
      } else {
        for (int64_t i = 0; i < n; ++i)
          for (int64_t k = 0; k < hw; ++k) {
            int64_t idx = (i * c + ch) * hw + k;
            gx[idx] += gm * inv * gy[idx];
          }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// RoIAlign
// ---------------------------------------------------------------------------

namespace detail {

struct BilinearTaps {
  int64_t i00, i01, i10, i11;  // flat offsets within one channel plane
  double w00, w01, w10, w11;
};

// Bilinear interpolation taps at continuous (x, y), where grid cell (i, j)
// has its center at (j + 0.5, i + 0.5); coordinates clamp to the border.
inline BilinearTaps bilinear_taps(double y, double x, int64_t h, int64_t w) {
  double ys = std::clamp(y - 0.5, 0.0, static_cast<double>(h - 1));
  double xs = std::clamp(x - 0.5, 0.0, static_cast<double>(w - 1));
  int64_t y0 = static_cast<int64_t>(std::floor(ys));
  int64_t x0 = static_cast<int64_t>(std::floor(xs));
  int64_t y1 = std::min(y0 + 1, h - 1);
  int64_t x1 = std::min(x0 + 1, w - 1);
  double fy = ys - static_cast<double>(y0);
  double fx = xs - static_cast<double>(x0);
  BilinearTaps t;
  t.i00 = y0 * w + x0;
  t.i01 = y0 * w + x1;
  t.i10 = y1 * w + x0;
  t.i11 = y1 * w + x1;
  t.w00 = (1.0 - fy) * (1.0 - fx);
  t.w01 = (1.0 - fy) * fx;
  t.w10 = fy * (1.0 - fx);
  t.w11 = fy * fx;
  return t;
}

}  // namespace detail

// Quantization-free pooling of box regions from a (N,C,Hf,Wf) feature map to
// (M,C,P,P). Boxes are given in view pixels and divided by `stride` to reach
// feature coordinates; each output bin averages sampling_ratio^2 bilinear
// samples placed at regular offsets. Differentiable w.r.t. the feature map.
inline Value roi_align(Value feature, const std::vector<RoiSpec>& rois, double stride,
                       int64_t out_size, int64_t sampling_ratio) {
  const Tensor& f = feature.val();
  check_input(f.rank() == 4, "roi_align: need (N,C,H,W) features");
  check_input(stride > 0.0 && out_size >= 1 && sampling_ratio >= 1, "roi_align: bad parameters");
  int64_t n = f.shape[0], c = f.shape[1], h = f.shape[2], w = f.shape[3];
  int64_t mrois = static_cast<int64_t>(rois.size());
  for (const RoiSpec& r : rois) {
    check_input(r.batch >= 0 && r.batch < n, "roi_align: batch index out of range");
    if (r.box.w < 1e-6 || r.box.h < 1e-6)
      throw InvalidInputError("roi_align: degenerate box");
  }

  const int64_t p = out_size, sr = sampling_ratio;
  Tensor out({mrois, c, p, p});
  auto rois_copy = std::make_shared<std::vector<RoiSpec>>(rois);
  double inv_samples = 1.0 / static_cast<double>(sr * sr);

  for (int64_t m = 0; m < mrois; ++m) {
    const RoiSpec& r = rois[static_cast<size_t>(m)];
    double x0 = r.box.x0() / stride, y0 = r.box.y0() / stride;
    double bw = r.box.w / stride / static_cast<double>(p);
    double bh = r.box.h / stride / static_cast<double>(p);
    for (int64_t py = 0; py < p; ++py)
      for (int64_t px = 0; px < p; ++px) {
        for (int64_t iy = 0; iy < sr; ++iy)
          for (int64_t ix = 0; ix < sr; ++ix) {
            double sy = y0 + (static_cast<double>(py) + (static_cast<double>(iy) + 0.5) / static_cast<double>(sr)) * bh;
            double sx = x0 + (static_cast<double>(px) + (static_cast<double>(ix) + 0.5) / static_cast<double>(sr)) * bw;
            detail::BilinearTaps t = detail::bilinear_taps(sy, sx, h, w);
            for (int64_t ch = 0; ch < c; ++ch) {
              const double* plane = f.data.data() + (r.batch * c + ch) * h * w;
              out.at(m, ch, py, px) += (t.w00 * plane[t.i00] + t.w01 * plane[t.i01] +
                                        t.w10 * plane[t.i10] + t.w11 * plane[t.i11]) *
                                       inv_samples;
            }
          }
      }
  }

  int ifeat = feature.id;
  return feature.graph->emit(std::move(out), {ifeat},
                             [ifeat, rois_copy, stride, p, sr, c, h, w, inv_samples](Graph& g, int id) {
    const Tensor& gy = g.grad_buf(id);
    Tensor& gf = g.grad_buf(ifeat);
    for (int64_t m = 0; m < static_cast<int64_t>(rois_copy->size()); ++m) {
      const RoiSpec& r = (*rois_copy)[static_cast<size_t>(m)];
      double x0 = r.box.x0() / stride, y0 = r.box.y0() / stride;
      double bw = r.box.w / stride / static_cast<double>(p);
      double bh = r.box.h / stride / static_cast<double>(p);
      for (int64_t py = 0; py < p; ++py)
        for (int64_t px = 0; px < p; ++px)
          for (int64_t iy = 0; iy < sr; ++iy)
            for (int64_t ix = 0; ix < sr; ++ix) {
              double sy = y0 + (static_cast<double>(py) + (static_cast<double>(iy) + 0.5) / static_cast<double>(sr)) * bh;
              double sx = x0 + (static_cast<double>(px) + (static_cast<double>(ix) + 0.5) / static_cast<double>(sr)) * bw;
              detail::BilinearTaps t = detail::bilinear_taps(sy, sx, h, w);
              for (int64_t ch = 0; ch < c; ++ch) {
                double gv = gy.at(m, ch, py, px) * inv_samples;
                double* plane = gf.data.data() + (r.batch * c + ch) * h * w;
                plane[t.i00] += t.w00 * gv;
                plane[t.i01] += t.w01 * gv;
                plane[t.i10] += t.w10 * gv;
                plane[t.i11] += t.w11 * gv;
              }
            }
    }
  });
}

// Convenience overload for a single (C,H,W) feature map and one box.
inline Value roi_align(Value feature, const BBox& box, double stride, int64_t out_size,
                       int64_t sampling_ratio) {
  const Tensor& f = feature.val();
  check_input(f.rank() == 3, "roi_align: need (C,H,W) feature");
  Value batched = reshape(feature, {1, f.shape[0], f.shape[1], f.shape[2]});
  Value pooled = roi_align(batched, {RoiSpec{0, box}}, stride, out_size, sampling_ratio);
  return reshape(pooled, {f.shape[0], out_size, out_size});
}

// ---------------------------------------------------------------------------
// Row scatter/merge
// ---------------------------------------------------------------------------

// Merges several (Mi, D) parts into one (sum Mi, D) tensor; row r of part p
// lands at output row dest_rows[p][r]. Used to reassemble per-pyramid-level
// RoI batches back into proposal order.
inline Value concat_rows_ordered(const std::vector<Value>& parts,
                                 const std::vector<std::vector<int64_t>>& dest_rows) {
  check_input(!parts.empty() && parts.size() == dest_rows.size(), "concat_rows_ordered: arity mismatch");
  int64_t d = parts[0].val().shape[1];
  int64_t total = 0;
  for (size_t p = 0; p < parts.size(); ++p) {
    check_input(parts[p].val().rank() == 2 && parts[p].val().shape[1] == d,
                "concat_rows_ordered: parts must be (Mi, D) with equal D");
    check_input(parts[p].val().shape[0] == static_cast<int64_t>(dest_rows[p].size()),
                "concat_rows_ordered: row index count mismatch");
    total += parts[p].val().shape[0];
  }
  Tensor out({total, d});
  std::vector<int> input_ids;
  for (size_t p = 0; p < parts.size(); ++p) {
    input_ids.push_back(parts[p].id);
    const Tensor& pv = parts[p].val();
    for (int64_t r = 0; r < pv.shape[0]; ++r) {
      int64_t dst = dest_rows[p][static_cast<size_t>(r)];
      check_input(dst >= 0 && dst < total, "concat_rows_ordered: row index out of range");
      for (int64_t j = 0; j < d; ++j) out.at(dst, j) = pv.at(r, j);
    }
  }
  auto rows = std::make_shared<std::vector<std::vector<int64_t>>>(dest_rows);
  auto ids = std::make_shared<std::vector<int>>(input_ids);
  return parts[0].graph->emit(std::move(out), input_ids, [rows, ids, d](Graph& g, int id) {
    const Tensor& gy = g.grad_buf(id);
    for (size_t p = 0; p < ids->size(); ++p) {
      Tensor& gp = g.grad_buf((*ids)[p]);
      for (int64_t r = 0; r < gp.shape[0]; ++r) {
        int64_t src = (*rows)[p][static_cast<size_t>(r)];
        for (int64_t j = 0; j < d; ++j) gp.at(r, j) += gy.at(src, j);
      }
    }
  });
}

}  // namespace soco
