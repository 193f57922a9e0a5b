#include "ihd/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "ihd/errors.hpp"

namespace ihd {

namespace {

std::uint64_t g_next_id = 1;  // graph construction is single-threaded

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

// ---- raw kernels ----

// C = A * B, row-major, C pre-zeroed
void mm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        const double* arow = a + i * k;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double aik = arow[kk];
            if (aik == 0.0) continue;
            const double* brow = b + kk * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
        }
    }
}

// C += A * B^T where A is [m x n], B is [k x n] -> C [m x k]
void mm_nt_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t n, std::size_t k) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * n;
        double* crow = c + i * k;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double* brow = b + kk * n;
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += arow[j] * brow[j];
            crow[kk] += acc;
        }
    }
}

// C += A^T * B where A is [m x k], B is [m x n] -> C [k x n]
void mm_tn_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        const double* brow = b + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double aik = arow[kk];
            if (aik == 0.0) continue;
            double* crow = c + kk * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
        }
    }
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
    const std::size_t rank = std::max(a.size(), b.size());
    Shape out(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        const std::size_t ea = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
        const std::size_t eb = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
        if (ea != eb && ea != 1 && eb != 1) {
            throw ShapeError("add: cannot broadcast " + shape_to_string(a) + " with " + shape_to_string(b));
        }
        out[i] = std::max(ea, eb);
    }
    return out;
}

// Strides of `shape` right-aligned into a frame of rank `rank`; broadcast
// axes get stride 0.
std::vector<std::size_t> broadcast_strides(const Shape& shape, std::size_t rank, const Shape& out) {
    std::vector<std::size_t> strides(rank, 0);
    std::size_t s = 1;
    for (std::size_t i = shape.size(); i-- > 0;) {
        const std::size_t axis = rank - shape.size() + i;
        strides[axis] = (shape[i] == 1 && out[axis] != 1) ? 0 : s;
        s *= shape[i];
    }
    return strides;
}

// Sums `g` (shape `from`) down to shape `to` (right-aligned broadcast axes).
DenseArray reduce_to_shape(const DenseArray& g, const Shape& to) {
    if (g.shape() == to) return g;
    const Shape& from = g.shape();
    const std::size_t rank = from.size();
    DenseArray out(to, 0.0);
    const auto strides = broadcast_strides(to, rank, from);
    std::vector<std::size_t> idx(rank, 0);
    const double* src = g.data();
    double* dst = out.data();
    for (std::size_t flat = 0; flat < g.size(); ++flat) {
        std::size_t off = 0;
        for (std::size_t d = 0; d < rank; ++d) off += idx[d] * strides[d];
        dst[off] += src[flat];
        for (std::size_t d = rank; d-- > 0;) {
            if (++idx[d] < from[d]) break;
            idx[d] = 0;
        }
    }
    return out;
}

struct AxisGeom {
    std::size_t outer, n, inner;
};

AxisGeom axis_geometry(const Shape& shape, std::size_t axis) {
    if (axis >= shape.size()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_to_string(shape));
    }
    AxisGeom g{1, shape[axis], 1};
    for (std::size_t i = 0; i < axis; ++i) g.outer *= shape[i];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) g.inner *= shape[i];
    return g;
}

}  // namespace

// ---- node plumbing ----

void Node::accumulate(const DenseArray& g) {
    if (!requires_grad) return;
    if (!has_grad) {
        grad = g;
        has_grad = true;
        return;
    }
    double* dst = grad.data();
    const double* src = g.data();
    for (std::size_t i = 0; i < grad.size(); ++i) dst[i] += src[i];
}

void Node::accumulate(DenseArray&& g) {
    if (!requires_grad) return;
    if (!has_grad) {
        grad = std::move(g);
        has_grad = true;
        return;
    }
    accumulate(static_cast<const DenseArray&>(g));
}

void Node::clear_grad() {
    grad = DenseArray();
    has_grad = false;
}

NodePtr constant(DenseArray value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = false;
    n->id = g_next_id++;
    n->op = "constant";
    return n;
}

NodePtr parameter(DenseArray value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = true;
    n->id = g_next_id++;
    n->op = "parameter";
    return n;
}

NodePtr make_node(DenseArray value, std::vector<NodePtr> parents, const char* op) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->parents = std::move(parents);
    for (const auto& p : n->parents) {
        if (p->requires_grad) n->requires_grad = true;
    }
    n->id = g_next_id++;
    n->op = op;
    return n;
}

// ---- operations ----

NodePtr matmul(const NodePtr& a, const NodePtr& b) {
    const auto& sa = a->value.shape();
    const auto& sb = b->value.shape();
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) {
        throw ShapeError("matmul: incompatible shapes " + shape_to_string(sa) + " and " + shape_to_string(sb));
    }
    const std::size_t m = sa[0], k = sa[1], n = sb[1];
    DenseArray out({m, n}, 0.0);
    mm_nn(a->value.data(), b->value.data(), out.data(), m, k, n);
    auto node = make_node(std::move(out), {a, b}, "matmul");
    node->backward_rule = [m, k, n](Node& self) {
        const double* g = self.grad.data();
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.requires_grad) {
            DenseArray da({m, k}, 0.0);
            mm_nt_acc(g, pb.value.data(), da.data(), m, n, k);  // dA = G * B^T
            pa.accumulate(std::move(da));
        }
        if (pb.requires_grad) {
            DenseArray db({k, n}, 0.0);
            mm_tn_acc(pa.value.data(), g, db.data(), m, k, n);  // dB = A^T * G
            pb.accumulate(std::move(db));
        }
    };
    return node;
}

NodePtr bmm(const NodePtr& a, const NodePtr& b) {
    const auto& sa = a->value.shape();
    const auto& sb = b->value.shape();
    if (sa.size() != 3 || sb.size() != 3 || sa[0] != sb[0] || sa[2] != sb[1]) {
        throw ShapeError("bmm: incompatible shapes " + shape_to_string(sa) + " and " + shape_to_string(sb));
    }
    const std::size_t bs = sa[0], m = sa[1], k = sa[2], n = sb[2];
    DenseArray out({bs, m, n}, 0.0);
    for (std::size_t i = 0; i < bs; ++i) {
        mm_nn(a->value.data() + i * m * k, b->value.data() + i * k * n, out.data() + i * m * n, m, k, n);
    }
    auto node = make_node(std::move(out), {a, b}, "bmm");
    node->backward_rule = [bs, m, k, n](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.requires_grad) {
            DenseArray da({bs, m, k}, 0.0);
            for (std::size_t i = 0; i < bs; ++i) {
                mm_nt_acc(self.grad.data() + i * m * n, pb.value.data() + i * k * n, da.data() + i * m * k, m, n,
                          k);
            }
            pa.accumulate(std::move(da));
        }
        if (pb.requires_grad) {
            DenseArray db({bs, k, n}, 0.0);
            for (std::size_t i = 0; i < bs; ++i) {
                mm_tn_acc(pa.value.data() + i * m * k, self.grad.data() + i * m * n, db.data() + i * k * n, m, k,
                          n);
            }
            pb.accumulate(std::move(db));
        }
    };
    return node;
}

NodePtr add(const NodePtr& a, const NodePtr& b) {
    const Shape out_shape = broadcast_shape(a->value.shape(), b->value.shape());
    const std::size_t rank = out_shape.size();
    DenseArray out(out_shape, 0.0);
    const auto stra = broadcast_strides(a->value.shape(), rank, out_shape);
    const auto strb = broadcast_strides(b->value.shape(), rank, out_shape);
    const double* pa = a->value.data();
    const double* pb = b->value.data();
    double* po = out.data();
    if (a->value.shape() == out_shape && b->value.shape() == out_shape) {
        for (std::size_t i = 0; i < out.size(); ++i) po[i] = pa[i] + pb[i];
    } else {
        std::vector<std::size_t> idx(rank, 0);
        for (std::size_t flat = 0; flat < out.size(); ++flat) {
            std::size_t oa = 0, ob = 0;
            for (std::size_t d = 0; d < rank; ++d) {
                oa += idx[d] * stra[d];
                ob += idx[d] * strb[d];
            }
            po[flat] = pa[oa] + pb[ob];
            for (std::size_t d = rank; d-- > 0;) {
                if (++idx[d] < out_shape[d]) break;
                idx[d] = 0;
            }
        }
    }
    auto node = make_node(std::move(out), {a, b}, "add");
    node->backward_rule = [](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.requires_grad) pa.accumulate(reduce_to_shape(self.grad, pa.value.shape()));
        if (pb.requires_grad) pb.accumulate(reduce_to_shape(self.grad, pb.value.shape()));
    };
    return node;
}

NodePtr scale(const NodePtr& a, double c) {
    DenseArray out(a->value.shape(), 0.0);
    const double* src = a->value.data();
    double* dst = out.data();
    for (std::size_t i = 0; i < out.size(); ++i) dst[i] = src[i] * c;
    auto node = make_node(std::move(out), {a}, "scale");
    node->backward_rule = [c](Node& self) {
        Node& p = *self.parents[0];
        if (!p.requires_grad) return;
        DenseArray g(self.grad.shape(), 0.0);
        const double* src = self.grad.data();
        double* dst = g.data();
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] = src[i] * c;
        p.accumulate(std::move(g));
    };
    return node;
}

NodePtr reshape(const NodePtr& a, Shape shape) {
    if (shape_product(shape) != a->value.size()) {
        throw ShapeError("reshape: " + shape_to_string(a->value.shape()) + " to " + shape_to_string(shape) +
                         " changes element count");
    }
    DenseArray out(std::move(shape), a->value.values());
    auto node = make_node(std::move(out), {a}, "reshape");
    node->backward_rule = [](Node& self) {
        Node& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.accumulate(DenseArray(p.value.shape(), self.grad.values()));
    };
    return node;
}

namespace {

DenseArray permute_kernel(const DenseArray& x, const std::vector<std::size_t>& axes) {
    const Shape& in = x.shape();
    const std::size_t rank = in.size();
    Shape out_shape(rank);
    for (std::size_t i = 0; i < rank; ++i) out_shape[i] = in[axes[i]];
    DenseArray out(out_shape, 0.0);
    std::vector<std::size_t> in_strides(rank, 1);
    for (std::size_t i = rank - 1; i-- > 0;) in_strides[i] = in_strides[i + 1] * in[i + 1];
    std::vector<std::size_t> src_strides(rank);
    for (std::size_t i = 0; i < rank; ++i) src_strides[i] = in_strides[axes[i]];
    std::vector<std::size_t> idx(rank, 0);
    const double* src = x.data();
    double* dst = out.data();
    std::size_t off = 0;
    for (std::size_t flat = 0; flat < out.size(); ++flat) {
        dst[flat] = src[off];
        for (std::size_t d = rank; d-- > 0;) {
            ++idx[d];
            off += src_strides[d];
            if (idx[d] < out_shape[d]) break;
            off -= idx[d] * src_strides[d];
            idx[d] = 0;
        }
    }
    return out;
}

}  // namespace

NodePtr permute(const NodePtr& a, std::vector<std::size_t> axes) {
    const std::size_t rank = a->value.rank();
    if (axes.size() != rank) throw ShapeError("permute: axes rank mismatch");
    std::vector<bool> seen(rank, false);
    for (std::size_t ax : axes) {
        if (ax >= rank || seen[ax]) throw ShapeError("permute: invalid axis list");
        seen[ax] = true;
    }
    auto node = make_node(permute_kernel(a->value, axes), {a}, "permute");
    std::vector<std::size_t> inverse(rank);
    for (std::size_t i = 0; i < rank; ++i) inverse[axes[i]] = i;
    node->backward_rule = [inverse](Node& self) {
        Node& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.accumulate(permute_kernel(self.grad, inverse));
    };
    return node;
}

NodePtr gather_rows(const NodePtr& table, std::vector<std::size_t> rows) {
    const auto& ts = table->value.shape();
    if (ts.size() != 2) throw ShapeError("gather_rows: table must be 2-D, got " + shape_to_string(ts));
    const std::size_t cols = ts[1];
    for (std::size_t r : rows) {
        if (r >= ts[0]) throw ShapeError("gather_rows: row index " + std::to_string(r) + " out of range");
    }
    DenseArray out({rows.size(), cols}, 0.0);
    const double* src = table->value.data();
    double* dst = out.data();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::copy(src + rows[i] * cols, src + (rows[i] + 1) * cols, dst + i * cols);
    }
    auto node = make_node(std::move(out), {table}, "gather_rows");
    node->backward_rule = [rows = std::move(rows), cols](Node& self) {
        Node& p = *self.parents[0];
        if (!p.requires_grad) return;
        DenseArray g(p.value.shape(), 0.0);
        const double* src = self.grad.data();
        double* dst = g.data();
        for (std::size_t i = 0; i < rows.size(); ++i) {
            double* drow = dst + rows[i] * cols;
            const double* srow = src + i * cols;
            for (std::size_t j = 0; j < cols; ++j) drow[j] += srow[j];
        }
        p.accumulate(std::move(g));
    };
    return node;
}

NodePtr gather(const NodePtr& x, std::vector<std::size_t> indices, Shape out_shape) {
    if (indices.size() != shape_product(out_shape)) {
        throw ShapeError("gather: index count does not match output shape " + shape_to_string(out_shape));
    }
    const std::size_t limit = x->value.size();
    for (std::size_t i : indices) {
        if (i >= limit) throw ShapeError("gather: index " + std::to_string(i) + " out of range");
    }
    DenseArray out(std::move(out_shape), 0.0);
    const double* src = x->value.data();
    double* dst = out.data();
    for (std::size_t i = 0; i < indices.size(); ++i) dst[i] = src[indices[i]];
    auto node = make_node(std::move(out), {x}, "gather");
    node->backward_rule = [indices = std::move(indices)](Node& self) {
        Node& p = *self.parents[0];
        if (!p.requires_grad) return;
        DenseArray g(p.value.shape(), 0.0);
        const double* src = self.grad.data();
        double* dst = g.data();
        for (std::size_t i = 0; i < indices.size(); ++i) dst[indices[i]] += src[i];
        p.accumulate(std::move(g));
    };
    return node;
}

NodePtr softmax(const NodePtr& x, std::size_t axis) {
    if (!x->value.all_finite()) throw ValidationError("softmax: non-finite input");
    const AxisGeom geom = axis_geometry(x->value.shape(), axis);
    DenseArray out(x->value.shape(), 0.0);
    const double* src = x->value.data();
    double* dst = out.data();
    for (std::size_t o = 0; o < geom.outer; ++o) {
        for (std::size_t in = 0; in < geom.inner; ++in) {
            const std::size_t base = o * geom.n * geom.inner + in;
            double mx = src[base];
            for (std::size_t i = 1; i < geom.n; ++i) mx = std::max(mx, src[base + i * geom.inner]);
            double sum = 0.0;
            for (std::size_t i = 0; i < geom.n; ++i) {
                const double e = std::exp(src[base + i * geom.inner] - mx);
                dst[base + i * geom.inner] = e;
                sum += e;
            }
            const double inv = 1.0 / sum;
            for (std::size_t i = 0; i < geom.n; ++i) dst[base + i * geom.inner] *= inv;
        }
    }
    auto node = make_node(std::move(out), {x}, "softmax");
    node->backward_rule = [geom](Node& self) {
        Node& p = *self.parents[0];
        if (!p.requires_grad) return;
        DenseArray g(p.value.shape(), 0.0);
        const double* y = self.value.data();
        const double* go = self.grad.data();
        double* gi = g.data();
        for (std::size_t o = 0; o < geom.outer; ++o) {
            for (std::size_t in = 0; in < geom.inner; ++in) {
                const std::size_t base = o * geom.n * geom.inner + in;
                double dot = 0.0;
                for (std::size_t i = 0; i < geom.n; ++i) {
                    const std::size_t k = base + i * geom.inner;
                    dot += go[k] * y[k];
                }
                for (std::size_t i = 0; i < geom.n; ++i) {
                    const std::size_t k = base + i * geom.inner;
                    gi[k] = y[k] * (go[k] - dot);
                }
            }
        }
        p.accumulate(std::move(g));
    };
    return node;
}

NodePtr layer_norm(const NodePtr& x, const NodePtr& gain, const NodePtr& bias, double eps) {
    const Shape& xs = x->value.shape();
    if (xs.empty()) throw ShapeError("layer_norm: input must have rank >= 1");
    const std::size_t n = xs.back();
    if (gain->value.shape() != Shape{n} || bias->value.shape() != Shape{n}) {
        throw ShapeError("layer_norm: gain/bias must match last extent " + std::to_string(n));
    }
    const std::size_t rows = x->value.size() / n;
    auto xhat = std::make_shared<DenseArray>(xs, 0.0);
    auto inv_std = std::make_shared<std::vector<double>>(rows, 0.0);
    DenseArray out(xs, 0.0);
    const double* src = x->value.data();
    const double* gm = gain->value.data();
    const double* bt = bias->value.data();
    double* xh = xhat->data();
    double* dst = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = src + r * n;
        double mean = 0.0;
        for (std::size_t j = 0; j < n; ++j) mean += row[j];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double d = row[j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(n);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[r] = is;
        for (std::size_t j = 0; j < n; ++j) {
            const double xn = (row[j] - mean) * is;
            xh[r * n + j] = xn;
            dst[r * n + j] = gm[j] * xn + bt[j];
        }
    }
    auto node = make_node(std::move(out), {x, gain, bias}, "layer_norm");
    node->backward_rule = [n, rows, xhat, inv_std](Node& self) {
        Node& px = *self.parents[0];
        Node& pg = *self.parents[1];
        Node& pb = *self.parents[2];
        const double* go = self.grad.data();
        const double* xh = xhat->data();
        const double* gm = pg.value.data();
        if (pg.requires_grad || pb.requires_grad) {
            DenseArray dgain({n}, 0.0);
            DenseArray dbias({n}, 0.0);
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t j = 0; j < n; ++j) {
                    dgain[j] += go[r * n + j] * xh[r * n + j];
                    dbias[j] += go[r * n + j];
                }
            }
            if (pg.requires_grad) pg.accumulate(std::move(dgain));
            if (pb.requires_grad) pb.accumulate(std::move(dbias));
        }
        if (px.requires_grad) {
            DenseArray dx(px.value.shape(), 0.0);
            double* gi = dx.data();
            for (std::size_t r = 0; r < rows; ++r) {
                double mean_a = 0.0, mean_ax = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    const double a = gm[j] * go[r * n + j];
                    mean_a += a;
                    mean_ax += a * xh[r * n + j];
                }
                mean_a /= static_cast<double>(n);
                mean_ax /= static_cast<double>(n);
                const double is = (*inv_std)[r];
                for (std::size_t j = 0; j < n; ++j) {
                    const double a = gm[j] * go[r * n + j];
                    gi[r * n + j] = is * (a - mean_a - xh[r * n + j] * mean_ax);
                }
            }
            px.accumulate(std::move(dx));
        }
    };
    return node;
}

NodePtr gelu(const NodePtr& x) {
    DenseArray out(x->value.shape(), 0.0);
    const double* src = x->value.data();
    double* dst = out.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        dst[i] = 0.5 * src[i] * (1.0 + std::erf(src[i] * kInvSqrt2));
    }
    auto node = make_node(std::move(out), {x}, "gelu");
    node->backward_rule = [](Node& self) {
        Node& p = *self.parents[0];
        if (!p.requires_grad) return;
        DenseArray g(p.value.shape(), 0.0);
        const double* xv = p.value.data();
        const double* go = self.grad.data();
        double* gi = g.data();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double cdf = 0.5 * (1.0 + std::erf(xv[i] * kInvSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * xv[i] * xv[i]);
            gi[i] = go[i] * (cdf + xv[i] * pdf);
        }
        p.accumulate(std::move(g));
    };
    return node;
}

NodePtr mean_axis(const NodePtr& x, std::size_t axis) {
    const AxisGeom geom = axis_geometry(x->value.shape(), axis);
    Shape out_shape;
    for (std::size_t i = 0; i < x->value.rank(); ++i) {
        if (i != axis) out_shape.push_back(x->value.extent(i));
    }
    if (out_shape.empty()) out_shape = {1};
    DenseArray out(out_shape, 0.0);
    const double* src = x->value.data();
    double* dst = out.data();
    const double inv = 1.0 / static_cast<double>(geom.n);
    for (std::size_t o = 0; o < geom.outer; ++o) {
        for (std::size_t in = 0; in < geom.inner; ++in) {
            double acc = 0.0;
            for (std::size_t i = 0; i < geom.n; ++i) acc += src[o * geom.n * geom.inner + i * geom.inner + in];
            dst[o * geom.inner + in] = acc * inv;
        }
    }
    auto node = make_node(std::move(out), {x}, "mean_axis");
    node->backward_rule = [geom, inv](Node& self) {
        Node& p = *self.parents[0];
        if (!p.requires_grad) return;
        DenseArray g(p.value.shape(), 0.0);
        const double* go = self.grad.data();
        double* gi = g.data();
        for (std::size_t o = 0; o < geom.outer; ++o) {
            for (std::size_t in = 0; in < geom.inner; ++in) {
                const double v = go[o * geom.inner + in] * inv;
                for (std::size_t i = 0; i < geom.n; ++i) gi[o * geom.n * geom.inner + i * geom.inner + in] = v;
            }
        }
        p.accumulate(std::move(g));
    };
    return node;
}

NodePtr sum_all(const NodePtr& x) {
    double acc = 0.0;
    for (std::size_t i = 0; i < x->value.size(); ++i) acc += x->value[i];
    auto node = make_node(DenseArray::scalar(acc), {x}, "sum_all");
    node->backward_rule = [](Node& self) {
        Node& p = *self.parents[0];
        if (!p.requires_grad) return;
        DenseArray g(p.value.shape(), self.grad[0]);
        p.accumulate(std::move(g));
    };
    return node;
}

NodePtr bce_with_logits(const NodePtr& logits, const DenseArray& targets,
                        const std::vector<double>& class_weights) {
    const Shape& ls = logits->value.shape();
    if (ls != targets.shape()) {
        throw ShapeError("bce_with_logits: logits " + shape_to_string(ls) + " vs targets " +
                         shape_to_string(targets.shape()));
    }
    if (ls.empty() || ls.size() > 2) throw ShapeError("bce_with_logits: expects [C] or [N x C] logits");
    const std::size_t classes = ls.back();
    const std::size_t rows = logits->value.size() / classes;
    if (class_weights.size() != classes) {
        throw ShapeError("bce_with_logits: weight count " + std::to_string(class_weights.size()) +
                         " does not match class count " + std::to_string(classes));
    }
    for (double t : targets.values()) {
        if (t != 0.0 && t != 1.0) throw ValidationError("bce_with_logits: non-binary target " + std::to_string(t));
    }
    double weight_sum = 0.0;
    for (double w : class_weights) weight_sum += w;
    const double norm = 1.0 / (static_cast<double>(rows) * weight_sum);

    const double* lv = logits->value.data();
    const double* tv = targets.data();
    double loss = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < classes; ++c) {
            const double l = lv[r * classes + c];
            const double y = tv[r * classes + c];
            // max(l,0) - l*y + log(1 + exp(-|l|))
            const double e = std::max(l, 0.0) - l * y + std::log1p(std::exp(-std::abs(l)));
            loss += class_weights[c] * e;
        }
    }
    loss *= norm;
    auto targets_copy = std::make_shared<DenseArray>(targets);
    auto node = make_node(DenseArray::scalar(loss), {logits}, "bce_with_logits");
    node->backward_rule = [rows, classes, class_weights, norm, targets_copy](Node& self) {
        Node& p = *self.parents[0];
        if (!p.requires_grad) return;
        const double gs = self.grad[0];
        DenseArray g(p.value.shape(), 0.0);
        const double* lv = p.value.data();
        const double* tv = targets_copy->data();
        double* gi = g.data();
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < classes; ++c) {
                const std::size_t k = r * classes + c;
                const double sig = 1.0 / (1.0 + std::exp(-lv[k]));
                gi[k] = gs * class_weights[c] * (sig - tv[k]) * norm;
            }
        }
        p.accumulate(std::move(g));
    };
    return node;
}

// ---- backward ----

void backward(const NodePtr& root) {
    if (!root) throw ValidationError("backward: null root");
    if (root->value.size() != 1) {
        throw ValidationError("backward: root must be scalar, got shape " + shape_to_string(root->value.shape()));
    }
    // collect reachable nodes
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<Node*> stack{root.get()};
    seen.insert(root.get());
    while (!stack.empty()) {
        Node* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (const auto& p : n->parents) {
            if (seen.insert(p.get()).second) stack.push_back(p.get());
        }
    }
    // reverse topological order by creation index
    std::sort(order.begin(), order.end(), [](const Node* a, const Node* b) { return a->id > b->id; });
    for (Node* n : order) n->clear_grad();
    root->grad = DenseArray(root->value.shape(), 1.0);
    root->has_grad = true;
    for (Node* n : order) {
        if (n->has_grad && n->backward_rule) n->backward_rule(*n);
    }
}

void sgd_update(const std::vector<NodePtr>& params, double lr) {
    if (lr < 0.0) throw ValidationError("sgd_update: negative learning rate");
    for (const auto& p : params) {
        if (!p->has_grad) continue;
        double* v = p->value.data();
        const double* g = p->grad.data();
        for (std::size_t i = 0; i < p->value.size(); ++i) v[i] -= lr * g[i];
    }
}

// ---- gradient check ----

std::string GradCheckReport::to_string() const {
    std::ostringstream os;
    os << (passed ? "PASS" : "FAIL") << " checked=" << checked << " worst_rel_err=" << worst_rel_err;
    if (!worst_param.empty()) {
        os << " at " << worst_param << "[" << worst_coord << "]"
           << " analytic=" << worst_analytic << " numeric=" << worst_numeric;
    }
    return os.str();
}

GradCheckReport grad_check(const std::function<NodePtr()>& build_loss,
                           const std::vector<std::pair<std::string, NodePtr>>& params, double h,
                           double tol, std::size_t max_coords, Rng& rng) {
    GradCheckReport report;

    NodePtr root = build_loss();
    backward(root);
    std::vector<DenseArray> analytic;
    analytic.reserve(params.size());
    for (const auto& [name, p] : params) {
        analytic.push_back(p->has_grad ? p->grad : DenseArray(p->value.shape(), 0.0));
    }

    std::vector<std::pair<std::size_t, std::size_t>> coords;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        for (std::size_t i = 0; i < params[pi].second->value.size(); ++i) coords.emplace_back(pi, i);
    }
    if (coords.size() > max_coords) {
        rng.shuffle(coords);
        coords.resize(max_coords);
    }

    for (const auto& [pi, i] : coords) {
        Node& p = *params[pi].second;
        const double saved = p.value[i];
        p.value[i] = saved + h;
        const double up = build_loss()->value[0];
        p.value[i] = saved - h;
        const double down = build_loss()->value[0];
        p.value[i] = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double a = analytic[pi][i];
        const double rel = std::abs(a - numeric) / std::max(1.0, std::abs(a));
        ++report.checked;
        if (rel > report.worst_rel_err) {
            report.worst_rel_err = rel;
            report.worst_param = params[pi].first;
            report.worst_coord = i;
            report.worst_analytic = a;
            report.worst_numeric = numeric;
        }
        if (rel > tol) report.passed = false;
    }
    return report;
}

}  // namespace ihd
