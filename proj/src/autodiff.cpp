#include "adaforge/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace adaforge {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

namespace {

thread_local bool t_grad_enabled = true;

[[noreturn]] void shape_fail(OpKind k, const std::string& detail) {
  throw std::invalid_argument(std::string(op_name(k)) + ": " + detail);
}

using NodePtr = std::shared_ptr<detail::Node>;

NodePtr make_node(OpKind op, Tensor data, std::vector<NodePtr> parents) {
  auto n = std::make_shared<detail::Node>();
  n->op = op;
  n->data = std::move(data);
  if (t_grad_enabled) {
    for (const auto& p : parents)
      if (p->requires_grad) n->requires_grad = true;
    n->parents = std::move(parents);
  }
  return n;
}

detail::Node* raw(const Value& v) { return v.node(); }

// Adds src into the parent's backward scratch, allocating on first touch.
void accum(detail::Node* p, const double* src, int64_t n) {
  if (!p->requires_grad) return;
  if (p->tmp.empty()) p->tmp = Tensor::zeros(p->data.shape);
  double* dst = p->tmp.data();
  for (int64_t i = 0; i < n; ++i) dst[i] += src[i];
}

double* scratch(detail::Node* p) {
  if (!p->requires_grad) return nullptr;
  if (p->tmp.empty()) p->tmp = Tensor::zeros(p->data.shape);
  return p->tmp.data();
}

}  // namespace

const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Constant: return "constant";
    case OpKind::Matmul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::Mul: return "mul";
    case OpKind::Relu: return "relu";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Log: return "log";
    case OpKind::Neg: return "neg";
    case OpKind::Mean: return "mean";
    case OpKind::Sum: return "sum";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::Maxpool2x2: return "maxpool2x2";
    case OpKind::Upsample2x: return "upsample2x";
    case OpKind::Reshape: return "reshape";
    case OpKind::Concat: return "concat";
    case OpKind::SoftmaxRows: return "softmax_rows";
    case OpKind::SliceChannel: return "slice_channel";
  }
  return "?";
}

OpKind op_kind_from_name(const std::string& name) {
  static const std::unordered_map<std::string, OpKind> table = {
      {"matmul", OpKind::Matmul},         {"add", OpKind::Add},
      {"mul", OpKind::Mul},               {"relu", OpKind::Relu},
      {"sigmoid", OpKind::Sigmoid},       {"log", OpKind::Log},
      {"neg", OpKind::Neg},               {"mean", OpKind::Mean},
      {"sum", OpKind::Sum},               {"conv2d", OpKind::Conv2d},
      {"maxpool2x2", OpKind::Maxpool2x2}, {"upsample2x", OpKind::Upsample2x},
      {"reshape", OpKind::Reshape},       {"concat", OpKind::Concat},
      {"softmax_rows", OpKind::SoftmaxRows},
      {"slice_channel", OpKind::SliceChannel},
  };
  auto it = table.find(name);
  if (it == table.end()) throw std::invalid_argument("unknown op kind: " + name);
  return it->second;
}

Value Value::leaf(Tensor data, bool requires_grad) {
  auto n = std::make_shared<detail::Node>();
  n->op = OpKind::Leaf;
  n->data = std::move(data);
  n->requires_grad = requires_grad && t_grad_enabled;
  if (n->requires_grad) n->grad = Tensor::zeros(n->data.shape);
  return Value(n);
}

Value Value::constant(Tensor data) {
  auto n = std::make_shared<detail::Node>();
  n->op = OpKind::Constant;
  n->data = std::move(data);
  return Value(n);
}

Value Value::constant(const Shape& s, double fill) {
  return constant(Tensor::full(s, fill));
}

double Value::item() const {
  if (numel() != 1)
    throw std::invalid_argument("item: value is not scalar, shape " + shape().str());
  return n_->data[0];
}

NoGradGuard::NoGradGuard() : prev_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = prev_; }
bool grad_enabled() { return t_grad_enabled; }

const char* group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::Encoder: return "encoder";
    case ParamGroup::Task: return "task";
    case ParamGroup::Discriminator: return "discriminator";
  }
  return "?";
}

ParamGroup group_from_name(const std::string& name) {
  if (name == "encoder") return ParamGroup::Encoder;
  if (name == "task") return ParamGroup::Task;
  if (name == "discriminator") return ParamGroup::Discriminator;
  throw std::invalid_argument("unknown parameter group: " + name);
}

void zero_grad(const std::vector<Parameter>& params) {
  for (const auto& p : params) p.value.node()->grad_ref().zero();
}

// ---------------------------------------------------------------------------
// ops
// ---------------------------------------------------------------------------

Value matmul(const Value& a, const Value& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.rank() != 2 || sb.rank() != 2)
    shape_fail(OpKind::Matmul, "expects rank-2 inputs, got " + sa.str() + " x " + sb.str());
  if (sa.dim(1) != sb.dim(0))
    shape_fail(OpKind::Matmul, "inner dims mismatch " + sa.str() + " x " + sb.str());
  const int64_t m = sa.dim(0), k = sa.dim(1), n = sb.dim(1);

  Tensor out(Shape{m, n});
  {
    CMapMat A(a.data().data(), m, k), B(b.data().data(), k, n);
    MapMat C(out.data(), m, n);
    C.noalias() = A * B;
  }
  auto node = make_node(OpKind::Matmul, std::move(out), {a.handle(), b.handle()});
  if (node->requires_grad) {
    detail::Node* pa = raw(a);
    detail::Node* pb = raw(b);
    node->backprop = [pa, pb, m, k, n](detail::Node& self) {
      CMapMat G(self.tmp.data(), m, n);
      if (double* da = scratch(pa)) {
        CMapMat B(pb->data.data(), k, n);
        MapMat(da, m, k).noalias() += G * B.transpose();
      }
      if (double* db = scratch(pb)) {
        CMapMat A(pa->data.data(), m, k);
        MapMat(db, k, n).noalias() += A.transpose() * G;
      }
    };
  }
  return Value(node);
}

Value add(const Value& a, const Value& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const int64_t n = sa.numel();
  Tensor out = a.data();

  enum class Mode { Same, RowBias, ChannelBias };
  Mode mode;
  if (sa == sb) {
    mode = Mode::Same;
    const double* pb = b.data().data();
    for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] += pb[i];
  } else if (sb.rank() == 1 && sa.rank() == 2 && sb.dim(0) == sa.dim(1)) {
    mode = Mode::RowBias;
    const int64_t cols = sa.dim(1);
    const double* pb = b.data().data();
    for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] += pb[i % cols];
  } else if (sb.rank() == 1 && sa.rank() == 4 && sb.dim(0) == sa.dim(1)) {
    mode = Mode::ChannelBias;
    const int64_t C = sa.dim(1), hw = sa.dim(2) * sa.dim(3);
    const double* pb = b.data().data();
    double* po = out.data();
    for (int64_t i = 0; i < n; ++i) po[i] += pb[(i / hw) % C];
  } else {
    shape_fail(OpKind::Add, "incompatible shapes " + sa.str() + " + " + sb.str() +
                                " (supported: identical, (rows,n)+(n), (b,c,h,w)+(c))");
  }

  auto node = make_node(OpKind::Add, std::move(out), {a.handle(), b.handle()});
  if (node->requires_grad) {
    detail::Node* pa = raw(a);
    detail::Node* pb = raw(b);
    Shape shp = sa;
    node->backprop = [pa, pb, mode, shp, n](detail::Node& self) {
      const double* g = self.tmp.data();
      accum(pa, g, n);
      if (!pb->requires_grad) return;
      double* db = scratch(pb);
      switch (mode) {
        case Mode::Same:
          for (int64_t i = 0; i < n; ++i) db[i] += g[i];
          break;
        case Mode::RowBias: {
          const int64_t cols = shp.dim(1);
          for (int64_t i = 0; i < n; ++i) db[i % cols] += g[i];
          break;
        }
        case Mode::ChannelBias: {
          const int64_t C = shp.dim(1), hw = shp.dim(2) * shp.dim(3);
          for (int64_t i = 0; i < n; ++i) db[(i / hw) % C] += g[i];
          break;
        }
      }
    };
  }
  return Value(node);
}

Value mul(const Value& a, const Value& b) {
  if (a.shape() != b.shape())
    shape_fail(OpKind::Mul, "shapes differ " + a.shape().str() + " * " + b.shape().str());
  const int64_t n = a.numel();
  Tensor out = a.data();
  const double* pb = b.data().data();
  for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] *= pb[i];

  auto node = make_node(OpKind::Mul, std::move(out), {a.handle(), b.handle()});
  if (node->requires_grad) {
    detail::Node* pa = raw(a);
    detail::Node* pb_ = raw(b);
    node->backprop = [pa, pb_, n](detail::Node& self) {
      const double* g = self.tmp.data();
      if (double* da = scratch(pa)) {
        const double* bv = pb_->data.data();
        for (int64_t i = 0; i < n; ++i) da[i] += g[i] * bv[i];
      }
      if (double* db = scratch(pb_)) {
        const double* av = pa->data.data();
        for (int64_t i = 0; i < n; ++i) db[i] += g[i] * av[i];
      }
    };
  }
  return Value(node);
}

namespace {

template <typename Fwd, typename Bwd>
Value unary_op(OpKind kind, const Value& x, Fwd fwd, Bwd bwd) {
  const int64_t n = x.numel();
  Tensor out(x.shape());
  const double* px = x.data().data();
  for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = fwd(px[i]);

  auto node = make_node(kind, std::move(out), {x.handle()});
  if (node->requires_grad) {
    detail::Node* p = raw(x);
    node->backprop = [p, n, bwd](detail::Node& self) {
      double* dx = scratch(p);
      if (!dx) return;
      const double* g = self.tmp.data();
      const double* xv = p->data.data();
      const double* yv = self.data.data();
      for (int64_t i = 0; i < n; ++i) dx[i] += bwd(g[i], xv[i], yv[i]);
    };
  }
  return Value(node);
}

}  // namespace

Value relu(const Value& x) {
  return unary_op(
      OpKind::Relu, x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double g, double xv, double) { return xv > 0.0 ? g : 0.0; });
}

Value sigmoid(const Value& x) {
  return unary_op(
      OpKind::Sigmoid, x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double g, double, double yv) { return g * yv * (1.0 - yv); });
}

Value log(const Value& x) {
  return unary_op(
      OpKind::Log, x, [](double v) { return std::log(std::max(v, kLogClamp)); },
      [](double g, double xv, double) { return xv > kLogClamp ? g / xv : 0.0; });
}

Value neg(const Value& x) {
  return unary_op(
      OpKind::Neg, x, [](double v) { return -v; },
      [](double g, double, double) { return -g; });
}

namespace {

Value reduce_all(OpKind kind, const Value& x, bool average) {
  const int64_t n = x.numel();
  const double* px = x.data().data();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) acc += px[i];
  if (average) acc /= static_cast<double>(n);

  auto node = make_node(kind, Tensor::scalar(acc), {x.handle()});
  if (node->requires_grad) {
    detail::Node* p = raw(x);
    node->backprop = [p, n, average](detail::Node& self) {
      double* dx = scratch(p);
      if (!dx) return;
      const double g = average ? self.tmp[0] / static_cast<double>(n) : self.tmp[0];
      for (int64_t i = 0; i < n; ++i) dx[i] += g;
    };
  }
  return Value(node);
}

}  // namespace

Value mean(const Value& x) { return reduce_all(OpKind::Mean, x, true); }
Value sum(const Value& x) { return reduce_all(OpKind::Sum, x, false); }

namespace {

// Fills cols(C*k*k, H*W) with the padded receptive fields of one sample.
void im2col(const double* x, int64_t C, int64_t H, int64_t W, int64_t k, double* cols) {
  const int64_t pad = (k - 1) / 2;
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t ky = 0; ky < k; ++ky) {
      for (int64_t kx = 0; kx < k; ++kx) {
        double* row = cols + ((c * k + ky) * k + kx) * (H * W);
        for (int64_t y = 0; y < H; ++y) {
          const int64_t sy = y + ky - pad;
          if (sy < 0 || sy >= H) {
            std::fill(row + y * W, row + (y + 1) * W, 0.0);
            continue;
          }
          const double* src = x + (c * H + sy) * W;
          for (int64_t xx = 0; xx < W; ++xx) {
            const int64_t sx = xx + kx - pad;
            row[y * W + xx] = (sx < 0 || sx >= W) ? 0.0 : src[sx];
          }
        }
      }
    }
  }
}

// Scatter-adds cols gradients back into one sample.
void col2im(const double* cols, int64_t C, int64_t H, int64_t W, int64_t k, double* dx) {
  const int64_t pad = (k - 1) / 2;
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t ky = 0; ky < k; ++ky) {
      for (int64_t kx = 0; kx < k; ++kx) {
        const double* row = cols + ((c * k + ky) * k + kx) * (H * W);
        for (int64_t y = 0; y < H; ++y) {
          const int64_t sy = y + ky - pad;
          if (sy < 0 || sy >= H) continue;
          double* dst = dx + (c * H + sy) * W;
          for (int64_t xx = 0; xx < W; ++xx) {
            const int64_t sx = xx + kx - pad;
            if (sx >= 0 && sx < W) dst[sx] += row[y * W + xx];
          }
        }
      }
    }
  }
}

}  // namespace

Value conv2d(const Value& x, const Value& w, const Value& b) {
  const Shape& sx = x.shape();
  const Shape& sw = w.shape();
  const Shape& sb = b.shape();
  if (sx.rank() != 4 || sw.rank() != 4)
    shape_fail(OpKind::Conv2d, "expects rank-4 input and weight, got " + sx.str() + ", " + sw.str());
  if (sw.dim(2) != sw.dim(3) || sw.dim(2) % 2 == 0)
    shape_fail(OpKind::Conv2d, "kernel must be square with odd size, got " + sw.str());
  if (sx.dim(1) != sw.dim(1))
    shape_fail(OpKind::Conv2d, "input channels " + sx.str() + " do not match weight " + sw.str());
  if (sb.rank() != 1 || sb.dim(0) != sw.dim(0))
    shape_fail(OpKind::Conv2d, "bias " + sb.str() + " does not match out channels of " + sw.str());

  const int64_t B = sx.dim(0), C = sx.dim(1), H = sx.dim(2), W = sx.dim(3);
  const int64_t O = sw.dim(0), k = sw.dim(2);
  const int64_t rows = C * k * k, hw = H * W;

  Tensor out(Shape{B, O, H, W});
  {
    std::vector<double> cols(static_cast<size_t>(rows * hw));
    CMapMat Wm(w.data().data(), O, rows);
    for (int64_t s = 0; s < B; ++s) {
      im2col(x.data().data() + s * C * hw, C, H, W, k, cols.data());
      CMapMat M(cols.data(), rows, hw);
      MapMat Y(out.data() + s * O * hw, O, hw);
      Y.noalias() = Wm * M;
      for (int64_t o = 0; o < O; ++o) Y.row(o).array() += b.data()[static_cast<size_t>(o)];
    }
  }

  auto node = make_node(OpKind::Conv2d, std::move(out),
                        {x.handle(), w.handle(),
                         b.handle()});
  if (node->requires_grad) {
    detail::Node* px = raw(x);
    detail::Node* pw = raw(w);
    detail::Node* pb = raw(b);
    node->backprop = [px, pw, pb, B, C, H, W, O, k, rows, hw](detail::Node& self) {
      std::vector<double> cols(static_cast<size_t>(rows * hw));
      std::vector<double> dcols;
      double* dx = scratch(px);
      double* dw = scratch(pw);
      double* db = scratch(pb);
      if (dx) dcols.resize(static_cast<size_t>(rows * hw));
      for (int64_t s = 0; s < B; ++s) {
        CMapMat G(self.tmp.data() + s * O * hw, O, hw);
        if (db)
          for (int64_t o = 0; o < O; ++o) db[o] += G.row(o).sum();
        if (dw) {
          im2col(px->data.data() + s * C * hw, C, H, W, k, cols.data());
          CMapMat M(cols.data(), rows, hw);
          MapMat(dw, O, rows).noalias() += G * M.transpose();
        }
        if (dx) {
          CMapMat Wm(pw->data.data(), O, rows);
          MapMat DM(dcols.data(), rows, hw);
          DM.noalias() = Wm.transpose() * G;
          col2im(dcols.data(), C, H, W, k, dx + s * C * hw);
        }
      }
    };
  }
  return Value(node);
}

namespace {

void pool_dims(OpKind kind, const Shape& s, int64_t& lead, int64_t& H, int64_t& W) {
  if (s.rank() < 2) shape_fail(kind, "expects rank >= 2, got " + s.str());
  lead = 1;
  for (int i = 0; i < s.rank() - 2; ++i) lead *= s.dim(i);
  H = s.dim(s.rank() - 2);
  W = s.dim(s.rank() - 1);
}

Shape with_spatial(const Shape& s, int64_t h, int64_t w) {
  std::vector<int64_t> d = s.dims();
  d[d.size() - 2] = h;
  d[d.size() - 1] = w;
  return Shape(d);
}

}  // namespace

Value maxpool2x2(const Value& x) {
  int64_t lead, H, W;
  pool_dims(OpKind::Maxpool2x2, x.shape(), lead, H, W);
  if (H % 2 != 0 || W % 2 != 0)
    shape_fail(OpKind::Maxpool2x2, "spatial dims must be even, got " + x.shape().str());
  const int64_t oh = H / 2, ow = W / 2;

  Tensor out(with_spatial(x.shape(), oh, ow));
  std::vector<int32_t> argmax(static_cast<size_t>(lead * oh * ow));
  const double* px = x.data().data();
  for (int64_t l = 0; l < lead; ++l) {
    const double* plane = px + l * H * W;
    for (int64_t y = 0; y < oh; ++y) {
      for (int64_t xx = 0; xx < ow; ++xx) {
        int best = 0;
        double bv = plane[(2 * y) * W + 2 * xx];
        const double cand[3] = {plane[(2 * y) * W + 2 * xx + 1],
                                plane[(2 * y + 1) * W + 2 * xx],
                                plane[(2 * y + 1) * W + 2 * xx + 1]};
        for (int c = 0; c < 3; ++c)
          if (cand[c] > bv) {
            bv = cand[c];
            best = c + 1;
          }
        const int64_t oi = (l * oh + y) * ow + xx;
        out[static_cast<size_t>(oi)] = bv;
        argmax[static_cast<size_t>(oi)] = best;
      }
    }
  }

  auto node = make_node(OpKind::Maxpool2x2, std::move(out), {x.handle()});
  if (node->requires_grad) {
    detail::Node* p = raw(x);
    node->backprop = [p, lead, H, W, oh, ow, argmax = std::move(argmax)](detail::Node& self) {
      double* dx = scratch(p);
      if (!dx) return;
      const double* g = self.tmp.data();
      for (int64_t l = 0; l < lead; ++l) {
        double* plane = dx + l * H * W;
        for (int64_t y = 0; y < oh; ++y)
          for (int64_t xx = 0; xx < ow; ++xx) {
            const int64_t oi = (l * oh + y) * ow + xx;
            const int a = argmax[static_cast<size_t>(oi)];
            const int64_t sy = 2 * y + (a >> 1), sx = 2 * xx + (a & 1);
            plane[sy * W + sx] += g[oi];
          }
      }
    };
  }
  return Value(node);
}

Value upsample2x(const Value& x) {
  int64_t lead, H, W;
  pool_dims(OpKind::Upsample2x, x.shape(), lead, H, W);
  const int64_t oh = H * 2, ow = W * 2;

  Tensor out(with_spatial(x.shape(), oh, ow));
  const double* px = x.data().data();
  for (int64_t l = 0; l < lead; ++l) {
    const double* sp = px + l * H * W;
    double* op = out.data() + l * oh * ow;
    for (int64_t y = 0; y < H; ++y)
      for (int64_t xx = 0; xx < W; ++xx) {
        const double v = sp[y * W + xx];
        op[(2 * y) * ow + 2 * xx] = v;
        op[(2 * y) * ow + 2 * xx + 1] = v;
        op[(2 * y + 1) * ow + 2 * xx] = v;
        op[(2 * y + 1) * ow + 2 * xx + 1] = v;
      }
  }

  auto node = make_node(OpKind::Upsample2x, std::move(out), {x.handle()});
  if (node->requires_grad) {
    detail::Node* p = raw(x);
    node->backprop = [p, lead, H, W, oh, ow](detail::Node& self) {
      double* dx = scratch(p);
      if (!dx) return;
      const double* g = self.tmp.data();
      for (int64_t l = 0; l < lead; ++l) {
        const double* gp = g + l * oh * ow;
        double* dp = dx + l * H * W;
        for (int64_t y = 0; y < H; ++y)
          for (int64_t xx = 0; xx < W; ++xx)
            dp[y * W + xx] += gp[(2 * y) * ow + 2 * xx] + gp[(2 * y) * ow + 2 * xx + 1] +
                              gp[(2 * y + 1) * ow + 2 * xx] + gp[(2 * y + 1) * ow + 2 * xx + 1];
      }
    };
  }
  return Value(node);
}

Value reshape(const Value& x, const Shape& target) {
  if (target.numel() != x.numel())
    shape_fail(OpKind::Reshape,
               "element count mismatch " + x.shape().str() + " -> " + target.str());
  Tensor out(target, x.data().v);

  auto node = make_node(OpKind::Reshape, std::move(out), {x.handle()});
  if (node->requires_grad) {
    detail::Node* p = raw(x);
    node->backprop = [p](detail::Node& self) {
      accum(p, self.tmp.data(), self.tmp.numel());
    };
  }
  return Value(node);
}

Value concat(const Value& a, const Value& b, int axis) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.rank() != sb.rank())
    shape_fail(OpKind::Concat, "rank mismatch " + sa.str() + " vs " + sb.str());
  if (axis < 0 || axis >= sa.rank())
    shape_fail(OpKind::Concat, "axis " + std::to_string(axis) + " out of range for " + sa.str());
  for (int i = 0; i < sa.rank(); ++i)
    if (i != axis && sa.dim(i) != sb.dim(i))
      shape_fail(OpKind::Concat, "non-axis dims differ " + sa.str() + " vs " + sb.str());

  std::vector<int64_t> od = sa.dims();
  od[static_cast<size_t>(axis)] += sb.dim(axis);
  Shape oshape{od};

  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= sa.dim(i);
  for (int i = axis + 1; i < sa.rank(); ++i) inner *= sa.dim(i);
  const int64_t blk_a = sa.dim(axis) * inner, blk_b = sb.dim(axis) * inner;

  Tensor out(oshape);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (int64_t o = 0; o < outer; ++o) {
    std::copy(pa + o * blk_a, pa + (o + 1) * blk_a, out.data() + o * (blk_a + blk_b));
    std::copy(pb + o * blk_b, pb + (o + 1) * blk_b,
              out.data() + o * (blk_a + blk_b) + blk_a);
  }

  auto node = make_node(OpKind::Concat, std::move(out), {a.handle(), b.handle()});
  if (node->requires_grad) {
    detail::Node* na = raw(a);
    detail::Node* nb = raw(b);
    node->backprop = [na, nb, outer, blk_a, blk_b](detail::Node& self) {
      const double* g = self.tmp.data();
      double* da = scratch(na);
      double* db = scratch(nb);
      for (int64_t o = 0; o < outer; ++o) {
        const double* base = g + o * (blk_a + blk_b);
        if (da)
          for (int64_t i = 0; i < blk_a; ++i) da[o * blk_a + i] += base[i];
        if (db)
          for (int64_t i = 0; i < blk_b; ++i) db[o * blk_b + i] += base[blk_a + i];
      }
    };
  }
  return Value(node);
}

Value softmax_rows(const Value& x) {
  const Shape& s = x.shape();
  if (s.rank() != 2)
    shape_fail(OpKind::SoftmaxRows, "expects rank-2 input, got " + s.str());
  const int64_t R = s.dim(0), C = s.dim(1);

  Tensor out(s);
  const double* px = x.data().data();
  for (int64_t r = 0; r < R; ++r) {
    const double* row = px + r * C;
    double m = row[0];
    for (int64_t c = 1; c < C; ++c) m = std::max(m, row[c]);
    double z = 0.0;
    double* orow = out.data() + r * C;
    for (int64_t c = 0; c < C; ++c) {
      orow[c] = std::exp(row[c] - m);
      z += orow[c];
    }
    for (int64_t c = 0; c < C; ++c) orow[c] /= z;
  }

  auto node = make_node(OpKind::SoftmaxRows, std::move(out), {x.handle()});
  if (node->requires_grad) {
    detail::Node* p = raw(x);
    node->backprop = [p, R, C](detail::Node& self) {
      double* dx = scratch(p);
      if (!dx) return;
      const double* g = self.tmp.data();
      const double* y = self.data.data();
      for (int64_t r = 0; r < R; ++r) {
        const double* gr = g + r * C;
        const double* yr = y + r * C;
        double dot = 0.0;
        for (int64_t c = 0; c < C; ++c) dot += gr[c] * yr[c];
        double* dr = dx + r * C;
        for (int64_t c = 0; c < C; ++c) dr[c] += yr[c] * (gr[c] - dot);
      }
    };
  }
  return Value(node);
}

Value slice_channel(const Value& x, int64_t channel) {
  const Shape& s = x.shape();
  if (s.rank() != 4)
    shape_fail(OpKind::SliceChannel, "expects rank-4 input, got " + s.str());
  if (channel < 0 || channel >= s.dim(1))
    shape_fail(OpKind::SliceChannel,
               "channel " + std::to_string(channel) + " out of range for " + s.str());
  const int64_t B = s.dim(0), C = s.dim(1), hw = s.dim(2) * s.dim(3);

  Tensor out(Shape{B, 1, s.dim(2), s.dim(3)});
  const double* px = x.data().data();
  for (int64_t b = 0; b < B; ++b)
    std::copy(px + (b * C + channel) * hw, px + (b * C + channel + 1) * hw,
              out.data() + b * hw);

  auto node = make_node(OpKind::SliceChannel, std::move(out), {x.handle()});
  if (node->requires_grad) {
    detail::Node* p = raw(x);
    node->backprop = [p, B, C, hw, channel](detail::Node& self) {
      double* dx = scratch(p);
      if (!dx) return;
      const double* g = self.tmp.data();
      for (int64_t b = 0; b < B; ++b) {
        double* dst = dx + (b * C + channel) * hw;
        const double* src = g + b * hw;
        for (int64_t i = 0; i < hw; ++i) dst[i] += src[i];
      }
    };
  }
  return Value(node);
}

Value forward_op(OpKind kind, const std::vector<Value>& inputs, const OpAttrs& attrs) {
  auto need = [&](size_t n) {
    if (inputs.size() != n)
      shape_fail(kind, "expects " + std::to_string(n) + " inputs, got " +
                           std::to_string(inputs.size()));
  };
  switch (kind) {
    case OpKind::Matmul: need(2); return matmul(inputs[0], inputs[1]);
    case OpKind::Add: need(2); return add(inputs[0], inputs[1]);
    case OpKind::Mul: need(2); return mul(inputs[0], inputs[1]);
    case OpKind::Relu: need(1); return relu(inputs[0]);
    case OpKind::Sigmoid: need(1); return sigmoid(inputs[0]);
    case OpKind::Log: need(1); return log(inputs[0]);
    case OpKind::Neg: need(1); return neg(inputs[0]);
    case OpKind::Mean: need(1); return mean(inputs[0]);
    case OpKind::Sum: need(1); return sum(inputs[0]);
    case OpKind::Conv2d: need(3); return conv2d(inputs[0], inputs[1], inputs[2]);
    case OpKind::Maxpool2x2: need(1); return maxpool2x2(inputs[0]);
    case OpKind::Upsample2x: need(1); return upsample2x(inputs[0]);
    case OpKind::Reshape: need(1); return reshape(inputs[0], attrs.shape);
    case OpKind::Concat: need(2); return concat(inputs[0], inputs[1], attrs.axis);
    case OpKind::SoftmaxRows: need(1); return softmax_rows(inputs[0]);
    case OpKind::SliceChannel: need(1); return slice_channel(inputs[0], attrs.channel);
    default:
      throw std::invalid_argument(std::string("forward_op: not a forward op: ") + op_name(kind));
  }
}

Value forward_op(const std::string& kind, const std::vector<Value>& inputs,
                 const OpAttrs& attrs) {
  return forward_op(op_kind_from_name(kind), inputs, attrs);
}

void backward(const Value& root) {
  if (!root.defined()) throw std::invalid_argument("backward: undefined root");
  if (root.numel() != 1)
    throw std::invalid_argument("backward: root must be scalar, got shape " +
                                root.shape().str());
  detail::Node* r = root.node();
  if (!r->requires_grad) return;

  // Iterative post-order topological sort.
  std::vector<detail::Node*> topo;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, size_t>> stack;
  stack.emplace_back(r, 0);
  visited.insert(r);
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      detail::Node* p = n->parents[idx++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      topo.push_back(n);
      stack.pop_back();
    }
  }

  // Per-pass scratch keeps repeated backward calls strictly additive.
  r->tmp = Tensor::scalar(1.0);
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    detail::Node* n = *it;
    if (!n->tmp.empty() && n->backprop) n->backprop(*n);
  }
  for (detail::Node* n : topo) {
    if (!n->tmp.empty()) {
      double* g = n->grad_ref().data();
      const double* t = n->tmp.data();
      const int64_t c = n->tmp.numel();
      for (int64_t i = 0; i < c; ++i) g[i] += t[i];
      n->tmp.release();
    }
  }
}

}  // namespace adaforge
