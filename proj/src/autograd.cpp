#include "selgan/autograd.hpp"

#include <Eigen/Core>
#include <cmath>
#include <unordered_set>

namespace selgan {

namespace {
thread_local bool grad_mode_enabled = true;

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;
}  // namespace

bool GradMode::enabled() noexcept { return grad_mode_enabled; }
void GradMode::set_enabled(bool on) noexcept { grad_mode_enabled = on; }

template <typename T>
void Node<T>::accumulate(const Tensor<T>& g) {
  if (g.numel() != value.numel()) {
    throw ShapeError("gradient of shape " + to_string(g.shape()) + " for value " +
                     to_string(value.shape()));
  }
  if (grad.numel() != value.numel()) {
    grad = g.reshaped(value.shape());
    return;
  }
  for (std::int64_t i = 0; i < g.numel(); ++i) grad[i] += g[i];
}

template <typename T>
void Node<T>::accumulate(Tensor<T>&& g) {
  if (g.numel() != value.numel()) {
    throw ShapeError("gradient of shape " + to_string(g.shape()) + " for value " +
                     to_string(value.shape()));
  }
  if (grad.numel() != value.numel()) {
    grad = std::move(g).reshaped(value.shape());
    return;
  }
  for (std::int64_t i = 0; i < g.numel(); ++i) grad[i] += g[i];
}

template <typename T>
Var<T>::Var(Tensor<T> value, bool requires_grad) : node_(std::make_shared<Node<T>>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

template <typename T>
T Var<T>::item() const {
  if (node_->value.numel() != 1) {
    throw ShapeError("item() on tensor of shape " + to_string(node_->value.shape()));
  }
  return node_->value[0];
}

template <typename T>
void Var<T>::backward() const {
  if (node_->value.numel() != 1) {
    throw ShapeError("backward() without upstream gradient needs a scalar, got " +
                     to_string(node_->value.shape()));
  }
  backward(Tensor<T>(node_->value.shape(), T(1)));
}

template <typename T>
void Var<T>::backward(Tensor<T> upstream) const {
  if (!node_->requires_grad) return;
  // Post-order DFS gives a topological order with parents before children.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  node_->accumulate(std::move(upstream));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward && node->grad.numel() == node->value.numel()) node->backward(*node);
  }
}

template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> parents,
                   std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  if (GradMode::enabled()) {
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (any) {
      node->requires_grad = true;
      node->parents.reserve(parents.size());
      for (const auto& p : parents) node->parents.push_back(p.node());
      node->backward = std::move(backward);
    }
  }
  return Var<T>(std::move(node));
}

namespace ops {
namespace {

template <typename T, typename F, typename D>
Var<T> unary(const Var<T>& a, F f, D derivative) {
  const Tensor<T>& x = a.value();
  Tensor<T> out(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) out[i] = f(x[i]);
  return make_result<T>(std::move(out), {a}, [derivative](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor<T>& g = p.grad_buffer();
    for (std::int64_t i = 0; i < g.numel(); ++i) {
      g[i] += self.grad[i] * derivative(p.value[i], self.value[i]);
    }
  });
}

template <typename T>
void require_scalar(const Var<T>& v, const char* what) {
  if (v.numel() != 1) {
    throw ShapeError(std::string(what) + ": expected a single-element tensor, got " +
                     to_string(v.shape()));
  }
}

}  // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out = a.value();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    for (auto& p : self.parents) {
      if (p->requires_grad) p->accumulate(self.grad);
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<T> out = a.value();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->accumulate(self.grad);
    if (self.parents[1]->requires_grad) {
      Tensor<T>& g = self.parents[1]->grad_buffer();
      for (std::int64_t i = 0; i < g.numel(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<T> out = a.value();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    Node<T>& pa = *self.parents[0];
    Node<T>& pb = *self.parents[1];
    if (pa.requires_grad) {
      Tensor<T>& g = pa.grad_buffer();
      for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      Tensor<T>& g = pb.grad_buffer();
      for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  return unary(a, [factor](T x) { return x * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T offset) {
  return unary(a, [offset](T x) { return x + offset; }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> scale_by(const Var<T>& a, const Var<T>& s) {
  require_scalar(s, "scale_by");
  const T factor = s.value()[0];
  Tensor<T> out = a.value();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= factor;
  return make_result<T>(std::move(out), {a, s}, [](Node<T>& self) {
    Node<T>& pa = *self.parents[0];
    Node<T>& ps = *self.parents[1];
    const T factor = ps.value[0];
    if (pa.requires_grad) {
      Tensor<T>& g = pa.grad_buffer();
      for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * factor;
    }
    if (ps.requires_grad) {
      T acc = 0;
      for (std::int64_t i = 0; i < self.grad.numel(); ++i) acc += self.grad[i] * pa.value[i];
      ps.grad_buffer()[0] += acc;
    }
  });
}

template <typename T>
Var<T> weighted_sum(const std::vector<Var<T>>& terms, const std::vector<T>& weights) {
  if (terms.size() != weights.size()) throw ShapeError("weighted_sum: weight count mismatch");
  T total = 0;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    require_scalar(terms[i], "weighted_sum");
    total += weights[i] * terms[i].value()[0];
  }
  return make_result<T>(Tensor<T>({1}, total), terms, [weights](Node<T>& self) {
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      if (self.parents[i]->requires_grad) {
        self.parents[i]->grad_buffer()[0] += weights[i] * self.grad[0];
      }
    }
  });
}

template <typename T>
Var<T> tanh(const Var<T>& a) {
  return unary(a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  return unary(
      a,
      [](T x) {
        if (x >= 0) return T(1) / (T(1) + std::exp(-x));
        const T e = std::exp(x);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  // Written so NaN passes through instead of becoming zero.
  return unary(a, [](T x) { return x < 0 ? T(0) : x; }, [](T x, T) { return x > 0 ? T(1) : T(0); });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& a, T slope) {
  return unary(
      a, [slope](T x) { return x < 0 ? slope * x : x; },
      [slope](T x, T) { return x > 0 ? T(1) : slope; });
}

template <typename T>
Var<T> abs(const Var<T>& a) {
  return unary(
      a, [](T x) { return std::abs(x); },
      [](T x, T) { return x > 0 ? T(1) : (x < 0 ? T(-1) : T(0)); });
}

template <typename T>
Var<T> log(const Var<T>& a) {
  return unary(a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Var<T> clamp(const Var<T>& a, T lo, T hi) {
  return unary(
      a, [lo, hi](T x) { return std::clamp(x, lo, hi); },
      [lo, hi](T x, T) { return (x >= lo && x <= hi) ? T(1) : T(0); });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  T total = 0;
  for (T v : a.value().values()) total += v;
  return make_result<T>(Tensor<T>({1}, total), {a}, [](Node<T>& self) {
    Tensor<T>& g = self.parents[0]->grad_buffer();
    const T up = self.grad[0];
    for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += up;
  });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  const T n = static_cast<T>(a.numel());
  T total = 0;
  for (T v : a.value().values()) total += v;
  return make_result<T>(Tensor<T>({1}, total / n), {a}, [n](Node<T>& self) {
    Tensor<T>& g = self.parents[0]->grad_buffer();
    const T up = self.grad[0] / n;
    for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += up;
  });
}

template <typename T>
Var<T> mean_channels(const Var<T>& a) {
  if (a.shape().size() != 4) throw ShapeError("mean_channels expects [B,C,H,W]");
  const std::int64_t B = a.dim(0), C = a.dim(1), HW = a.dim(2) * a.dim(3);
  Tensor<T> out({B, 1, a.dim(2), a.dim(3)});
  const T* x = a.value().data();
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t p = 0; p < HW; ++p) out[b * HW + p] += x[(b * C + c) * HW + p];
  for (auto& v : out.values()) v /= static_cast<T>(C);
  return make_result<T>(std::move(out), {a}, [B, C, HW](Node<T>& self) {
    Tensor<T>& g = self.parents[0]->grad_buffer();
    const T inv = T(1) / static_cast<T>(C);
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t p = 0; p < HW; ++p) g[(b * C + c) * HW + p] += self.grad[b * HW + p] * inv;
  });
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  Tensor<T> out = a.value().reshaped(std::move(shape));
  return make_result<T>(std::move(out), {a}, [](Node<T>& self) {
    self.parents[0]->accumulate(self.grad);
  });
}

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape& first = parts.front().shape();
  if (first.size() < 2) throw ShapeError("concat_channels expects rank >= 2");
  const std::int64_t B = first[0];
  std::int64_t inner = 1;
  for (std::size_t i = 2; i < first.size(); ++i) inner *= first[i];
  std::int64_t total_c = 0;
  std::vector<std::int64_t> channels;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size() || s[0] != B ||
        !std::equal(s.begin() + 2, s.end(), first.begin() + 2)) {
      throw ShapeError("concat_channels: incompatible shapes " + to_string(first) + " and " +
                       to_string(s));
    }
    channels.push_back(s[1]);
    total_c += s[1];
  }
  Shape out_shape = first;
  out_shape[1] = total_c;
  Tensor<T> out(out_shape);
  std::int64_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const T* src = parts[k].value().data();
    const std::int64_t block = channels[k] * inner;
    for (std::int64_t b = 0; b < B; ++b) {
      std::copy(src + b * block, src + (b + 1) * block, out.data() + (b * total_c + offset) * inner);
    }
    offset += channels[k];
  }
  return make_result<T>(std::move(out), parts, [channels, B, inner, total_c](Node<T>& self) {
    std::int64_t off = 0;
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      Node<T>& p = *self.parents[k];
      const std::int64_t block = channels[k] * inner;
      if (p.requires_grad) {
        Tensor<T>& g = p.grad_buffer();
        for (std::int64_t b = 0; b < B; ++b) {
          const T* src = self.grad.data() + (b * total_c + off) * inner;
          T* dst = g.data() + b * block;
          for (std::int64_t i = 0; i < block; ++i) dst[i] += src[i];
        }
      }
      off += channels[k];
    }
  });
}

template <typename T>
Var<T> slice_channels(const Var<T>& a, std::int64_t begin, std::int64_t count) {
  const Shape& s = a.shape();
  if (s.size() < 2 || begin < 0 || count < 1 || begin + count > s[1]) {
    throw ShapeError("slice_channels: range [" + std::to_string(begin) + "," +
                     std::to_string(begin + count) + ") outside " + to_string(s));
  }
  const std::int64_t B = s[0], C = s[1];
  std::int64_t inner = 1;
  for (std::size_t i = 2; i < s.size(); ++i) inner *= s[i];
  Shape out_shape = s;
  out_shape[1] = count;
  Tensor<T> out(out_shape);
  for (std::int64_t b = 0; b < B; ++b) {
    const T* src = a.value().data() + (b * C + begin) * inner;
    std::copy(src, src + count * inner, out.data() + b * count * inner);
  }
  return make_result<T>(std::move(out), {a}, [B, C, begin, count, inner](Node<T>& self) {
    Tensor<T>& g = self.parents[0]->grad_buffer();
    for (std::int64_t b = 0; b < B; ++b) {
      T* dst = g.data() + (b * C + begin) * inner;
      const T* src = self.grad.data() + b * count * inner;
      for (std::int64_t i = 0; i < count * inner; ++i) dst[i] += src[i];
    }
  });
}

template <typename T>
Var<T> gram(const Var<T>& x) {
  if (x.shape().size() != 3) throw ShapeError("gram expects [B,M,K], got " + to_string(x.shape()));
  const std::int64_t B = x.dim(0), M = x.dim(1), K = x.dim(2);
  Tensor<T> out({B, M, M});
  for (std::int64_t b = 0; b < B; ++b) {
    ConstMatMap<T> X(x.value().data() + b * M * K, M, K);
    MatMap<T> G(out.data() + b * M * M, M, M);
    G.noalias() = X * X.transpose();
  }
  return make_result<T>(std::move(out), {x}, [B, M, K](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    Tensor<T>& g = p.grad_buffer();
    for (std::int64_t b = 0; b < B; ++b) {
      ConstMatMap<T> dG(self.grad.data() + b * M * M, M, M);
      ConstMatMap<T> X(p.value.data() + b * M * K, M, K);
      MatMap<T> dX(g.data() + b * M * K, M, K);
      RowMatrix<T> sym = dG + dG.transpose();
      dX.noalias() += sym * X;
    }
  });
}

template <typename T>
Var<T> bmm(const Var<T>& a, const Var<T>& x) {
  if (a.shape().size() != 3 || x.shape().size() != 3 || a.dim(0) != x.dim(0) ||
      a.dim(2) != x.dim(1)) {
    throw ShapeError("bmm: incompatible shapes " + to_string(a.shape()) + " and " +
                     to_string(x.shape()));
  }
  const std::int64_t B = a.dim(0), M = a.dim(1), P = a.dim(2), K = x.dim(2);
  Tensor<T> out({B, M, K});
  for (std::int64_t b = 0; b < B; ++b) {
    ConstMatMap<T> A(a.value().data() + b * M * P, M, P);
    ConstMatMap<T> X(x.value().data() + b * P * K, P, K);
    MatMap<T> Y(out.data() + b * M * K, M, K);
    Y.noalias() = A * X;
  }
  return make_result<T>(std::move(out), {a, x}, [B, M, P, K](Node<T>& self) {
    Node<T>& pa = *self.parents[0];
    Node<T>& px = *self.parents[1];
    for (std::int64_t b = 0; b < B; ++b) {
      ConstMatMap<T> dY(self.grad.data() + b * M * K, M, K);
      if (pa.requires_grad) {
        ConstMatMap<T> X(px.value.data() + b * P * K, P, K);
        MatMap<T> dA(pa.grad_buffer().data() + b * M * P, M, P);
        dA.noalias() += dY * X.transpose();
      }
      if (px.requires_grad) {
        ConstMatMap<T> A(pa.value.data() + b * M * P, M, P);
        MatMap<T> dX(px.grad_buffer().data() + b * P * K, P, K);
        dX.noalias() += A.transpose() * dY;
      }
    }
  });
}

template <typename T>
Var<T> softmax_lastdim(const Var<T>& x) {
  const Shape& s = x.shape();
  if (s.empty()) throw ShapeError("softmax_lastdim on rank-0 tensor");
  const std::int64_t n = s.back();
  const std::int64_t rows = x.numel() / n;
  Tensor<T> out(s);
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* in = x.value().data() + r * n;
    T* o = out.data() + r * n;
    const T mx = *std::max_element(in, in + n);
    T z = 0;
    for (std::int64_t i = 0; i < n; ++i) z += (o[i] = std::exp(in[i] - mx));
    for (std::int64_t i = 0; i < n; ++i) o[i] /= z;
  }
  return make_result<T>(std::move(out), {x}, [rows, n](Node<T>& self) {
    Tensor<T>& g = self.parents[0]->grad_buffer();
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* y = self.value.data() + r * n;
      const T* dy = self.grad.data() + r * n;
      T dot = 0;
      for (std::int64_t i = 0; i < n; ++i) dot += dy[i] * y[i];
      for (std::int64_t i = 0; i < n; ++i) g[r * n + i] += y[i] * (dy[i] - dot);
    }
  });
}

template <typename T>
Var<T> softmax_channels(const Var<T>& x) {
  if (x.shape().size() != 4) throw ShapeError("softmax_channels expects [B,N,H,W]");
  const std::int64_t B = x.dim(0), N = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor<T> out(x.shape());
  const T* in = x.value().data();
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t p = 0; p < HW; ++p) {
      const std::int64_t base = b * N * HW + p;
      T mx = in[base];
      for (std::int64_t n = 1; n < N; ++n) mx = std::max(mx, in[base + n * HW]);
      T z = 0;
      for (std::int64_t n = 0; n < N; ++n) z += (out[base + n * HW] = std::exp(in[base + n * HW] - mx));
      for (std::int64_t n = 0; n < N; ++n) out[base + n * HW] /= z;
    }
  }
  return make_result<T>(std::move(out), {x}, [B, N, HW](Node<T>& self) {
    Tensor<T>& g = self.parents[0]->grad_buffer();
    for (std::int64_t b = 0; b < B; ++b) {
      for (std::int64_t p = 0; p < HW; ++p) {
        const std::int64_t base = b * N * HW + p;
        T dot = 0;
        for (std::int64_t n = 0; n < N; ++n) dot += self.grad[base + n * HW] * self.value[base + n * HW];
        for (std::int64_t n = 0; n < N; ++n) {
          const std::int64_t i = base + n * HW;
          g[i] += self.value[i] * (self.grad[i] - dot);
        }
      }
    }
  });
}

template <typename T>
Var<T> attention_select(const Var<T>& generations, const Var<T>& attention) {
  const Shape& gs = generations.shape();
  const Shape& as = attention.shape();
  if (gs.size() != 4 || as.size() != 4 || gs[0] != as[0] || gs[2] != as[2] || gs[3] != as[3] ||
      gs[1] != 3 * as[1]) {
    throw ShapeError("attention_select: generations " + to_string(gs) + " incompatible with attention " +
                     to_string(as));
  }
  const std::int64_t B = as[0], N = as[1], HW = as[2] * as[3];
  Tensor<T> out({B, 3, as[2], as[3]});
  const T* gen = generations.value().data();
  const T* att = attention.value().data();
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t c = 0; c < 3; ++c)
        for (std::int64_t p = 0; p < HW; ++p)
          out[(b * 3 + c) * HW + p] += att[(b * N + n) * HW + p] * gen[((b * N + n) * 3 + c) * HW + p];
  return make_result<T>(std::move(out), {generations, attention}, [B, N, HW](Node<T>& self) {
    Node<T>& pg = *self.parents[0];
    Node<T>& pa = *self.parents[1];
    T* dgen = pg.requires_grad ? pg.grad_buffer().data() : nullptr;
    T* datt = pa.requires_grad ? pa.grad_buffer().data() : nullptr;
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t c = 0; c < 3; ++c)
          for (std::int64_t p = 0; p < HW; ++p) {
            const T up = self.grad[(b * 3 + c) * HW + p];
            const std::int64_t gi = ((b * N + n) * 3 + c) * HW + p;
            const std::int64_t ai = (b * N + n) * HW + p;
            if (dgen) dgen[gi] += up * pa.value[ai];
            if (datt) datt[ai] += up * pg.value[gi];
          }
  });
}

template <typename T>
Var<T> bce_with_logits(const Var<T>& logits, T label) {
  const Tensor<T>& x = logits.value();
  const T n = static_cast<T>(x.numel());
  T total = 0;
  for (T v : x.values()) total += std::max(v, T(0)) - v * label + std::log1p(std::exp(-std::abs(v)));
  return make_result<T>(Tensor<T>({1}, total / n), {logits}, [label, n](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    Tensor<T>& g = p.grad_buffer();
    const T up = self.grad[0] / n;
    for (std::int64_t i = 0; i < g.numel(); ++i) {
      const T v = p.value[i];
      const T s = v >= 0 ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
      g[i] += up * (s - label);
    }
  });
}

template <typename T>
Var<T> uncertainty_weighted_mean(const Var<T>& loss_map, const Var<T>& u) {
  require_same_shape(loss_map.shape(), u.shape(), "uncertainty_weighted_mean");
  const Tensor<T>& L = loss_map.value();
  const Tensor<T>& U = u.value();
  const T n = static_cast<T>(L.numel());
  T total = 0;
  for (std::int64_t i = 0; i < L.numel(); ++i) total += L[i] / U[i] + std::log(U[i]);
  return make_result<T>(Tensor<T>({1}, total / n), {loss_map, u}, [n](Node<T>& self) {
    Node<T>& pl = *self.parents[0];
    Node<T>& pu = *self.parents[1];
    const T up = self.grad[0] / n;
    T* dl = pl.requires_grad ? pl.grad_buffer().data() : nullptr;
    T* du = pu.requires_grad ? pu.grad_buffer().data() : nullptr;
    for (std::int64_t i = 0; i < pl.value.numel(); ++i) {
      const T l = pl.value[i], uu = pu.value[i];
      if (dl) dl[i] += up / uu;
      if (du) du[i] += up * (T(1) / uu - l / (uu * uu));
    }
  });
}

template <typename T>
Var<T> total_variation(const Var<T>& x) {
  if (x.shape().size() != 4) throw ShapeError("total_variation expects [B,C,H,W]");
  const std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const T norm = static_cast<T>(B * H * W);
  const T* v = x.value().data();
  T total = 0;
  for (std::int64_t bc = 0; bc < B * C; ++bc) {
    const T* plane = v + bc * H * W;
    for (std::int64_t h = 0; h < H; ++h)
      for (std::int64_t w = 0; w < W; ++w) {
        if (h + 1 < H) total += std::abs(plane[(h + 1) * W + w] - plane[h * W + w]);
        if (w + 1 < W) total += std::abs(plane[h * W + w + 1] - plane[h * W + w]);
      }
  }
  return make_result<T>(Tensor<T>({1}, total / norm), {x}, [B, C, H, W, norm](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    Tensor<T>& g = p.grad_buffer();
    const T up = self.grad[0] / norm;
    auto sign = [](T d) { return d > 0 ? T(1) : (d < 0 ? T(-1) : T(0)); };
    for (std::int64_t bc = 0; bc < B * C; ++bc) {
      const T* plane = p.value.data() + bc * H * W;
      T* gp = g.data() + bc * H * W;
      for (std::int64_t h = 0; h < H; ++h)
        for (std::int64_t w = 0; w < W; ++w) {
          if (h + 1 < H) {
            const T s = sign(plane[(h + 1) * W + w] - plane[h * W + w]) * up;
            gp[(h + 1) * W + w] += s;
            gp[h * W + w] -= s;
          }
          if (w + 1 < W) {
            const T s = sign(plane[h * W + w + 1] - plane[h * W + w]) * up;
            gp[h * W + w + 1] += s;
            gp[h * W + w] -= s;
          }
        }
    }
  });
}

}  // namespace ops

#define SELGAN_INSTANTIATE(T)                                                                    \
  template struct Node<T>;                                                                       \
  template class Var<T>;                                                                         \
  template Var<T> make_result<T>(Tensor<T>, std::vector<Var<T>>, std::function<void(Node<T>&)>); \
  namespace ops {                                                                                \
  template Var<T> add(const Var<T>&, const Var<T>&);                                             \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                             \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                             \
  template Var<T> scale(const Var<T>&, T);                                                       \
  template Var<T> add_scalar(const Var<T>&, T);                                                  \
  template Var<T> scale_by(const Var<T>&, const Var<T>&);                                        \
  template Var<T> weighted_sum(const std::vector<Var<T>>&, const std::vector<T>&);               \
  template Var<T> tanh(const Var<T>&);                                                           \
  template Var<T> sigmoid(const Var<T>&);                                                        \
  template Var<T> relu(const Var<T>&);                                                           \
  template Var<T> leaky_relu(const Var<T>&, T);                                                  \
  template Var<T> abs(const Var<T>&);                                                            \
  template Var<T> log(const Var<T>&);                                                            \
  template Var<T> clamp(const Var<T>&, T, T);                                                    \
  template Var<T> sum(const Var<T>&);                                                            \
  template Var<T> mean(const Var<T>&);                                                           \
  template Var<T> mean_channels(const Var<T>&);                                                  \
  template Var<T> reshape(const Var<T>&, Shape);                                                 \
  template Var<T> concat_channels(const std::vector<Var<T>>&);                                   \
  template Var<T> slice_channels(const Var<T>&, std::int64_t, std::int64_t);                     \
  template Var<T> gram(const Var<T>&);                                                           \
  template Var<T> bmm(const Var<T>&, const Var<T>&);                                             \
  template Var<T> softmax_lastdim(const Var<T>&);                                                \
  template Var<T> softmax_channels(const Var<T>&);                                               \
  template Var<T> attention_select(const Var<T>&, const Var<T>&);                                \
  template Var<T> bce_with_logits(const Var<T>&, T);                                             \
  template Var<T> uncertainty_weighted_mean(const Var<T>&, const Var<T>&);                       \
  template Var<T> total_variation(const Var<T>&);                                                \
  }

SELGAN_INSTANTIATE(float)
SELGAN_INSTANTIATE(double)

#undef SELGAN_INSTANTIATE

}  // namespace selgan
