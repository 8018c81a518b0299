#include "resvit/autograd.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

namespace resvit {

namespace {
std::atomic<std::uint64_t> g_next_id{1};

void require(bool cond, const std::string& msg) {
    if (!cond) throw ShapeError(msg);
}
}  // namespace

Var Var::param(Tensor t) {
    auto n = std::make_shared<GraphNode>();
    n->value = std::move(t);
    n->needs_grad = true;
    n->is_param = true;
    n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
    return Var(std::move(n));
}

Var Var::constant(Tensor t) {
    auto n = std::make_shared<GraphNode>();
    n->value = std::move(t);
    n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
    return Var(std::move(n));
}

Var make_op(Tensor value, std::vector<Var> inputs, std::function<void(GraphNode&)> backward) {
    auto n = std::make_shared<GraphNode>();
    n->value = std::move(value);
    n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
    bool needs = false;
    for (const auto& in : inputs) needs = needs || in.needs_grad();
    n->needs_grad = needs;
    if (needs) {
        n->inputs.reserve(inputs.size());
        for (auto& in : inputs) n->inputs.push_back(in.node());
        n->backward = std::move(backward);
    }
    return Var(std::move(n));
}

void backward(const Var& loss) {
    require(loss.defined() && loss.val().numel() == 1, "backward() expects a scalar loss");
    if (!loss.needs_grad()) return;

    std::vector<GraphNode*> order;
    std::unordered_set<GraphNode*> seen;
    std::vector<GraphNode*> stack{loss.node().get()};
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        GraphNode* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (auto& in : n->inputs) {
            if (in->needs_grad && seen.insert(in.get()).second) stack.push_back(in.get());
        }
    }
    // Creation ids give a topological order: inputs always precede their ops.
    std::sort(order.begin(), order.end(),
              [](const GraphNode* a, const GraphNode* b) { return a->id > b->id; });

    loss.node()->grad_buffer()[0] = 1.0;
    for (GraphNode* n : order) {
        if (n->backward && !n->grad.v.empty()) n->backward(*n);
    }
}

namespace {

Var elementwise(const Var& a, Tensor out, std::function<void(const Tensor&, Tensor&)> dgrad) {
    // dgrad maps upstream grad to local grad contribution for input a.
    return make_op(std::move(out), {a}, [dgrad = std::move(dgrad)](GraphNode& self) {
        auto& in = *self.inputs[0];
        if (!in.needs_grad) return;
        dgrad(self.grad, in.grad_buffer());
    });
}

}  // namespace

Var add(const Var& a, const Var& b) {
    require(a.val().same_shape(b.val()),
            "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor out = a.val();
    const i64 n = out.numel();
    const double* pb = b.val().data();
    for (i64 i = 0; i < n; ++i) out[i] += pb[i];
    return make_op(std::move(out), {a, b}, [](GraphNode& self) {
        for (int k = 0; k < 2; ++k) {
            auto& in = *self.inputs[static_cast<std::size_t>(k)];
            if (!in.needs_grad) continue;
            Tensor& g = in.grad_buffer();
            for (i64 i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
        }
    });
}

Var sub(const Var& a, const Var& b) {
    require(a.val().same_shape(b.val()),
            "sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor out = a.val();
    const i64 n = out.numel();
    const double* pb = b.val().data();
    for (i64 i = 0; i < n; ++i) out[i] -= pb[i];
    return make_op(std::move(out), {a, b}, [](GraphNode& self) {
        if (self.inputs[0]->needs_grad) {
            Tensor& g = self.inputs[0]->grad_buffer();
            for (i64 i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
        }
        if (self.inputs[1]->needs_grad) {
            Tensor& g = self.inputs[1]->grad_buffer();
            for (i64 i = 0; i < g.numel(); ++i) g[i] -= self.grad[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    require(a.val().same_shape(b.val()),
            "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor out = a.val();
    const i64 n = out.numel();
    const double* pb = b.val().data();
    for (i64 i = 0; i < n; ++i) out[i] *= pb[i];
    return make_op(std::move(out), {a, b}, [](GraphNode& self) {
        const Tensor& av = self.inputs[0]->value;
        const Tensor& bv = self.inputs[1]->value;
        if (self.inputs[0]->needs_grad) {
            Tensor& g = self.inputs[0]->grad_buffer();
            for (i64 i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * bv[i];
        }
        if (self.inputs[1]->needs_grad) {
            Tensor& g = self.inputs[1]->grad_buffer();
            for (i64 i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * av[i];
        }
    });
}

Var scale(const Var& a, double c) {
    Tensor out = a.val();
    for (double& x : out.v) x *= c;
    return elementwise(a, std::move(out), [c](const Tensor& go, Tensor& g) {
        for (i64 i = 0; i < g.numel(); ++i) g[i] += c * go[i];
    });
}

Var add_scalar(const Var& a, double c) {
    Tensor out = a.val();
    for (double& x : out.v) x += c;
    return elementwise(a, std::move(out), [](const Tensor& go, Tensor& g) {
        for (i64 i = 0; i < g.numel(); ++i) g[i] += go[i];
    });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var relu(const Var& a) {
    Tensor out = a.val();
    for (double& x : out.v) x = x > 0.0 ? x : 0.0;
    Tensor saved = a.val();
    return elementwise(a, std::move(out), [saved = std::move(saved)](const Tensor& go, Tensor& g) {
        for (i64 i = 0; i < g.numel(); ++i)
            if (saved[i] > 0.0) g[i] += go[i];
    });
}

Var leaky_relu(const Var& a, double slope) {
    Tensor out = a.val();
    for (double& x : out.v) x = x > 0.0 ? x : slope * x;
    Tensor saved = a.val();
    return elementwise(a, std::move(out),
                       [saved = std::move(saved), slope](const Tensor& go, Tensor& g) {
                           for (i64 i = 0; i < g.numel(); ++i)
                               g[i] += (saved[i] > 0.0 ? 1.0 : slope) * go[i];
                       });
}

Var gelu(const Var& a) {
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt2pi = 0.3989422804014326779;
    Tensor out = a.val();
    for (double& x : out.v) x = 0.5 * x * (1.0 + std::erf(x * inv_sqrt2));
    Tensor saved = a.val();
    return elementwise(a, std::move(out), [saved = std::move(saved)](const Tensor& go, Tensor& g) {
        for (i64 i = 0; i < g.numel(); ++i) {
            double x = saved[i];
            double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
            double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
            g[i] += (cdf + x * pdf) * go[i];
        }
    });
}

Var tanh_op(const Var& a) {
    Tensor out = a.val();
    for (double& x : out.v) x = std::tanh(x);
    Tensor y = out;
    return elementwise(a, std::move(out), [y = std::move(y)](const Tensor& go, Tensor& g) {
        for (i64 i = 0; i < g.numel(); ++i) g[i] += (1.0 - y[i] * y[i]) * go[i];
    });
}

Var abs_op(const Var& a) {
    Tensor out = a.val();
    for (double& x : out.v) x = std::abs(x);
    Tensor saved = a.val();
    return elementwise(a, std::move(out), [saved = std::move(saved)](const Tensor& go, Tensor& g) {
        for (i64 i = 0; i < g.numel(); ++i) {
            double s = saved[i] > 0.0 ? 1.0 : (saved[i] < 0.0 ? -1.0 : 0.0);
            g[i] += s * go[i];
        }
    });
}

Var square(const Var& a) {
    Tensor out = a.val();
    for (double& x : out.v) x = x * x;
    Tensor saved = a.val();
    return elementwise(a, std::move(out), [saved = std::move(saved)](const Tensor& go, Tensor& g) {
        for (i64 i = 0; i < g.numel(); ++i) g[i] += 2.0 * saved[i] * go[i];
    });
}

Var log_op(const Var& a) {
    Tensor out = a.val();
    for (double& x : out.v) x = std::log(x);
    Tensor saved = a.val();
    return elementwise(a, std::move(out), [saved = std::move(saved)](const Tensor& go, Tensor& g) {
        for (i64 i = 0; i < g.numel(); ++i) g[i] += go[i] / saved[i];
    });
}

Var clamp_min(const Var& a, double lo) {
    Tensor out = a.val();
    for (double& x : out.v) x = x < lo ? lo : x;
    Tensor saved = a.val();
    return elementwise(a, std::move(out),
                       [saved = std::move(saved), lo](const Tensor& go, Tensor& g) {
                           for (i64 i = 0; i < g.numel(); ++i)
                               if (saved[i] > lo) g[i] += go[i];
                       });
}

Var sum_all(const Var& a) {
    double s = 0.0;
    for (double x : a.val().v) s += x;
    return make_op(Tensor::scalar(s), {a}, [](GraphNode& self) {
        auto& in = *self.inputs[0];
        if (!in.needs_grad) return;
        Tensor& g = in.grad_buffer();
        const double go = self.grad[0];
        for (i64 i = 0; i < g.numel(); ++i) g[i] += go;
    });
}

Var mean_all(const Var& a) {
    const i64 n = a.val().numel();
    require(n > 0, "mean_all: empty tensor");
    double s = 0.0;
    for (double x : a.val().v) s += x;
    return make_op(Tensor::scalar(s / static_cast<double>(n)), {a}, [n](GraphNode& self) {
        auto& in = *self.inputs[0];
        if (!in.needs_grad) return;
        Tensor& g = in.grad_buffer();
        const double go = self.grad[0] / static_cast<double>(n);
        for (i64 i = 0; i < g.numel(); ++i) g[i] += go;
    });
}

Var reshape(const Var& a, std::vector<i64> shape) {
    Tensor out = a.val().reshaped(std::move(shape));
    return make_op(std::move(out), {a}, [](GraphNode& self) {
        auto& in = *self.inputs[0];
        if (!in.needs_grad) return;
        Tensor& g = in.grad_buffer();
        for (i64 i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    });
}

Var concat_channels(const Var& a, const Var& b) {
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    require(sa.size() == 4 && sb.size() == 4, "concat_channels: expects 4D inputs");
    require(sa[0] == sb[0] && sa[2] == sb[2] && sa[3] == sb[3],
            "concat_channels: spatial/batch mismatch " + shape_str(sa) + " vs " + shape_str(sb));
    const i64 N = sa[0], Ca = sa[1], Cb = sb[1], H = sa[2], W = sa[3];
    Tensor out({N, Ca + Cb, H, W});
    const i64 plane = H * W;
    parallel_for(N, [&](i64 lo, i64 hi) {
        for (i64 n = lo; n < hi; ++n) {
            std::copy_n(a.val().data() + n * Ca * plane, Ca * plane,
                        out.data() + n * (Ca + Cb) * plane);
            std::copy_n(b.val().data() + n * Cb * plane, Cb * plane,
                        out.data() + (n * (Ca + Cb) + Ca) * plane);
        }
    });
    return make_op(std::move(out), {a, b}, [N, Ca, Cb, plane](GraphNode& self) {
        const Tensor& go = self.grad;
        if (self.inputs[0]->needs_grad) {
            Tensor& g = self.inputs[0]->grad_buffer();
            for (i64 n = 0; n < N; ++n)
                for (i64 i = 0; i < Ca * plane; ++i)
                    g[n * Ca * plane + i] += go[n * (Ca + Cb) * plane + i];
        }
        if (self.inputs[1]->needs_grad) {
            Tensor& g = self.inputs[1]->grad_buffer();
            for (i64 n = 0; n < N; ++n)
                for (i64 i = 0; i < Cb * plane; ++i)
                    g[n * Cb * plane + i] += go[(n * (Ca + Cb) + Ca) * plane + i];
        }
    });
}

Var slice_channels(const Var& a, i64 c_begin, i64 c_end) {
    const auto& s = a.shape();
    require(s.size() == 4, "slice_channels: expects 4D input");
    require(0 <= c_begin && c_begin < c_end && c_end <= s[1], "slice_channels: bad range");
    const i64 N = s[0], C = s[1], H = s[2], W = s[3], Cs = c_end - c_begin;
    const i64 plane = H * W;
    Tensor out({N, Cs, H, W});
    for (i64 n = 0; n < N; ++n)
        std::copy_n(a.val().data() + (n * C + c_begin) * plane, Cs * plane,
                    out.data() + n * Cs * plane);
    return make_op(std::move(out), {a}, [N, C, Cs, c_begin, plane](GraphNode& self) {
        auto& in = *self.inputs[0];
        if (!in.needs_grad) return;
        Tensor& g = in.grad_buffer();
        for (i64 n = 0; n < N; ++n)
            for (i64 i = 0; i < Cs * plane; ++i)
                g[(n * C + c_begin) * plane + i] += self.grad[n * Cs * plane + i];
    });
}

namespace {

// Bijective index-map op: out[i] = in[map[i]]. Backward gathers through the
// inverse map, so no scatter races exist.
Var gather_map(const Var& a, std::vector<i64> map, std::vector<i64> out_shape,
               const char* /*name*/) {
    Tensor out(std::move(out_shape));
    const double* src = a.val().data();
    const i64 n = out.numel();
    for (i64 i = 0; i < n; ++i) out[i] = src[map[static_cast<std::size_t>(i)]];
    return make_op(std::move(out), {a}, [map = std::move(map)](GraphNode& self) {
        auto& in = *self.inputs[0];
        if (!in.needs_grad) return;
        Tensor& g = in.grad_buffer();
        const i64 n = self.grad.numel();
        for (i64 i = 0; i < n; ++i) g[map[static_cast<std::size_t>(i)]] += self.grad[i];
    });
}

}  // namespace

Var patchify(const Var& x, i64 patch) {
    const auto& s = x.shape();
    require(s.size() == 4, "patchify: expects 4D input");
    const i64 N = s[0], C = s[1], H = s[2], W = s[3];
    require(patch >= 1 && H % patch == 0 && W % patch == 0,
            "patchify: spatial dims " + shape_str(s) + " not divisible by patch " +
                std::to_string(patch));
    const i64 gh = H / patch, gw = W / patch, np = gh * gw, d = C * patch * patch;
    std::vector<i64> map(static_cast<std::size_t>(N * np * d));
    i64 o = 0;
    for (i64 n = 0; n < N; ++n)
        for (i64 gy = 0; gy < gh; ++gy)
            for (i64 gx = 0; gx < gw; ++gx)
                for (i64 c = 0; c < C; ++c)
                    for (i64 py = 0; py < patch; ++py)
                        for (i64 px = 0; px < patch; ++px)
                            map[static_cast<std::size_t>(o++)] =
                                id4(n, c, gy * patch + py, gx * patch + px, C, H, W);
    return gather_map(x, std::move(map), {N, np, d}, "patchify");
}

Var unpatchify(const Var& z, i64 channels, i64 h, i64 w, i64 patch) {
    const auto& s = z.shape();
    require(s.size() == 3, "unpatchify: expects (N,NP,D) input");
    const i64 N = s[0], np = s[1], d = s[2];
    require(h % patch == 0 && w % patch == 0, "unpatchify: bad target dims");
    const i64 gh = h / patch, gw = w / patch;
    require(np == gh * gw, "unpatchify: token count " + std::to_string(np) +
                               " does not match grid " + std::to_string(gh * gw));
    require(d == channels * patch * patch, "unpatchify: token dim " + std::to_string(d) +
                                               " does not match channels*patch^2");
    std::vector<i64> map(static_cast<std::size_t>(N * channels * h * w));
    for (i64 n = 0; n < N; ++n)
        for (i64 c = 0; c < channels; ++c)
            for (i64 y = 0; y < h; ++y)
                for (i64 x = 0; x < w; ++x) {
                    i64 t = (y / patch) * gw + (x / patch);
                    i64 f = (c * patch + y % patch) * patch + x % patch;
                    map[static_cast<std::size_t>(id4(n, c, y, x, channels, h, w))] =
                        id3(n, t, f, np, d);
                }
    return gather_map(z, std::move(map), {N, channels, h, w}, "unpatchify");
}

Var split_heads(const Var& z, i64 heads) {
    const auto& s = z.shape();
    require(s.size() == 3, "split_heads: expects (N,T,D) input");
    const i64 N = s[0], T = s[1], D = s[2];
    require(D % heads == 0, "split_heads: dim " + std::to_string(D) +
                                " not divisible by heads " + std::to_string(heads));
    const i64 dh = D / heads;
    std::vector<i64> map(static_cast<std::size_t>(N * heads * T * dh));
    i64 o = 0;
    for (i64 n = 0; n < N; ++n)
        for (i64 a = 0; a < heads; ++a)
            for (i64 t = 0; t < T; ++t)
                for (i64 j = 0; j < dh; ++j)
                    map[static_cast<std::size_t>(o++)] = id3(n, t, a * dh + j, T, D);
    return gather_map(z, std::move(map), {N * heads, T, dh}, "split_heads");
}

Var merge_heads(const Var& z, i64 heads) {
    const auto& s = z.shape();
    require(s.size() == 3, "merge_heads: expects (N*h,T,dh) input");
    require(s[0] % heads == 0, "merge_heads: batch not divisible by heads");
    const i64 N = s[0] / heads, T = s[1], dh = s[2], D = heads * dh;
    std::vector<i64> map(static_cast<std::size_t>(N * T * D));
    i64 o = 0;
    for (i64 n = 0; n < N; ++n)
        for (i64 t = 0; t < T; ++t)
            for (i64 a = 0; a < heads; ++a)
                for (i64 j = 0; j < dh; ++j)
                    map[static_cast<std::size_t>(o++)] = id3(n * heads + a, t, j, T, dh);
    return gather_map(z, std::move(map), {N, T, D}, "merge_heads");
}

Var transpose_last2(const Var& a) {
    const auto& s = a.shape();
    require(s.size() == 3, "transpose_last2: expects 3D input");
    const i64 B = s[0], R = s[1], C = s[2];
    std::vector<i64> map(static_cast<std::size_t>(B * C * R));
    i64 o = 0;
    for (i64 b = 0; b < B; ++b)
        for (i64 c = 0; c < C; ++c)
            for (i64 r = 0; r < R; ++r) map[static_cast<std::size_t>(o++)] = id3(b, r, c, R, C);
    return gather_map(a, std::move(map), {B, C, R}, "transpose_last2");
}

Var linear(const Var& x, const Var& w, const Var& b) {
    const auto& sx = x.shape();
    const auto& sw = w.shape();
    require(sx.size() == 2 && sw.size() == 2, "linear: expects 2D input and weight");
    require(sx[1] == sw[0], "linear: inner dim mismatch " + shape_str(sx) + " x " + shape_str(sw));
    require(b.shape().size() == 1 && b.dim(0) == sw[1], "linear: bias shape mismatch");
    const i64 R = sx[0], I = sx[1], O = sw[1];
    Tensor out({R, O});
    const double* px = x.val().data();
    const double* pw = w.val().data();
    const double* pb = b.val().data();
    parallel_for(R, [&](i64 lo, i64 hi) {
        for (i64 r = lo; r < hi; ++r) {
            double* orow = out.data() + r * O;
            std::copy_n(pb, O, orow);
            const double* xrow = px + r * I;
            for (i64 i = 0; i < I; ++i) {
                const double xv = xrow[i];
                const double* wrow = pw + i * O;
                for (i64 o = 0; o < O; ++o) orow[o] += xv * wrow[o];
            }
        }
    });
    return make_op(std::move(out), {x, w, b}, [R, I, O](GraphNode& self) {
        const Tensor& go = self.grad;
        const Tensor& xv = self.inputs[0]->value;
        const Tensor& wv = self.inputs[1]->value;
        if (self.inputs[0]->needs_grad) {
            Tensor& gx = self.inputs[0]->grad_buffer();
            parallel_for(R, [&](i64 lo, i64 hi) {
                for (i64 r = lo; r < hi; ++r)
                    for (i64 i = 0; i < I; ++i) {
                        const double* wrow = wv.data() + i * O;
                        const double* grow = go.data() + r * O;
                        double acc = 0.0;
                        for (i64 o = 0; o < O; ++o) acc += grow[o] * wrow[o];
                        gx[r * I + i] += acc;
                    }
            });
        }
        if (self.inputs[1]->needs_grad) {
            Tensor& gw = self.inputs[1]->grad_buffer();
            parallel_for(I, [&](i64 lo, i64 hi) {
                for (i64 i = lo; i < hi; ++i) {
                    double* gwrow = gw.data() + i * O;
                    for (i64 r = 0; r < R; ++r) {
                        const double xvi = xv[r * I + i];
                        const double* grow = go.data() + r * O;
                        for (i64 o = 0; o < O; ++o) gwrow[o] += xvi * grow[o];
                    }
                }
            });
        }
        if (self.inputs[2]->needs_grad) {
            Tensor& gb = self.inputs[2]->grad_buffer();
            for (i64 r = 0; r < R; ++r)
                for (i64 o = 0; o < O; ++o) gb[o] += go[r * O + o];
        }
    });
}

Var bmm(const Var& a, const Var& b) {
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    require(sa.size() == 3 && sb.size() == 3, "bmm: expects 3D inputs");
    require(sa[0] == sb[0] && sa[2] == sb[1],
            "bmm: shape mismatch " + shape_str(sa) + " x " + shape_str(sb));
    const i64 B = sa[0], M = sa[1], K = sa[2], N = sb[2];
    Tensor out({B, M, N});
    const double* pa = a.val().data();
    const double* pb = b.val().data();
    parallel_for(B * M, [&](i64 lo, i64 hi) {
        for (i64 bm = lo; bm < hi; ++bm) {
            const i64 bb = bm / M, m = bm % M;
            double* orow = out.data() + (bb * M + m) * N;
            const double* arow = pa + (bb * M + m) * K;
            for (i64 k = 0; k < K; ++k) {
                const double av = arow[k];
                const double* brow = pb + (bb * K + k) * N;
                for (i64 n = 0; n < N; ++n) orow[n] += av * brow[n];
            }
        }
    });
    return make_op(std::move(out), {a, b}, [B, M, K, N](GraphNode& self) {
        const Tensor& go = self.grad;
        const Tensor& av = self.inputs[0]->value;
        const Tensor& bv = self.inputs[1]->value;
        if (self.inputs[0]->needs_grad) {
            Tensor& ga = self.inputs[0]->grad_buffer();
            parallel_for(B * M, [&](i64 lo, i64 hi) {
                for (i64 bm = lo; bm < hi; ++bm) {
                    const i64 bb = bm / M, m = bm % M;
                    const double* grow = go.data() + (bb * M + m) * N;
                    double* garow = ga.data() + (bb * M + m) * K;
                    for (i64 k = 0; k < K; ++k) {
                        const double* brow = bv.data() + (bb * K + k) * N;
                        double acc = 0.0;
                        for (i64 n = 0; n < N; ++n) acc += grow[n] * brow[n];
                        garow[k] += acc;
                    }
                }
            });
        }
        if (self.inputs[1]->needs_grad) {
            Tensor& gb = self.inputs[1]->grad_buffer();
            parallel_for(B * K, [&](i64 lo, i64 hi) {
                for (i64 bk = lo; bk < hi; ++bk) {
                    const i64 bb = bk / K, k = bk % K;
                    double* gbrow = gb.data() + (bb * K + k) * N;
                    for (i64 m = 0; m < M; ++m) {
                        const double avk = av[(bb * M + m) * K + k];
                        const double* grow = go.data() + (bb * M + m) * N;
                        for (i64 n = 0; n < N; ++n) gbrow[n] += avk * grow[n];
                    }
                }
            });
        }
    });
}

Var add_tokenwise(const Var& z, const Var& p) {
    const auto& sz = z.shape();
    const auto& sp = p.shape();
    require(sz.size() == 3 && sp.size() == 2, "add_tokenwise: expects (N,T,D)+(T,D)");
    require(sz[1] == sp[0] && sz[2] == sp[1],
            "add_tokenwise: shape mismatch " + shape_str(sz) + " + " + shape_str(sp));
    const i64 N = sz[0], TD = sz[1] * sz[2];
    Tensor out = z.val();
    const double* pp = p.val().data();
    for (i64 n = 0; n < N; ++n)
        for (i64 i = 0; i < TD; ++i) out[n * TD + i] += pp[i];
    return make_op(std::move(out), {z, p}, [N, TD](GraphNode& self) {
        if (self.inputs[0]->needs_grad) {
            Tensor& g = self.inputs[0]->grad_buffer();
            for (i64 i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
        }
        if (self.inputs[1]->needs_grad) {
            Tensor& g = self.inputs[1]->grad_buffer();
            for (i64 n = 0; n < N; ++n)
                for (i64 i = 0; i < TD; ++i) g[i] += self.grad[n * TD + i];
        }
    });
}

namespace {
inline i64 reflect_index(i64 i, i64 n) {
    if (i < 0) return -i;
    if (i >= n) return 2 * n - 2 - i;
    return i;
}
}  // namespace

Var pad2d(const Var& x, i64 pad, PadMode mode) {
    const auto& s = x.shape();
    require(s.size() == 4, "pad2d: expects 4D input");
    require(pad >= 0, "pad2d: negative pad");
    if (pad == 0) return x;
    const i64 N = s[0], C = s[1], H = s[2], W = s[3];
    if (mode == PadMode::reflect)
        require(pad < H && pad < W, "pad2d: reflect pad " + std::to_string(pad) +
                                        " too large for input " + shape_str(s));
    const i64 PH = H + 2 * pad, PW = W + 2 * pad;
    Tensor out({N, C, PH, PW});
    const double* px = x.val().data();
    parallel_for(N * C, [&](i64 lo, i64 hi) {
        for (i64 nc = lo; nc < hi; ++nc) {
            const double* xp = px + nc * H * W;
            double* op = out.data() + nc * PH * PW;
            for (i64 oh = 0; oh < PH; ++oh)
                for (i64 ow = 0; ow < PW; ++ow) {
                    const i64 ih = oh - pad, iw = ow - pad;
                    if (mode == PadMode::zero) {
                        op[oh * PW + ow] = (ih >= 0 && ih < H && iw >= 0 && iw < W)
                                               ? xp[ih * W + iw]
                                               : 0.0;
                    } else {
                        op[oh * PW + ow] = xp[reflect_index(ih, H) * W + reflect_index(iw, W)];
                    }
                }
        }
    });
    return make_op(std::move(out), {x}, [N, C, H, W, PH, PW, pad, mode](GraphNode& self) {
        auto& in = *self.inputs[0];
        if (!in.needs_grad) return;
        Tensor& g = in.grad_buffer();
        const Tensor& go = self.grad;
        parallel_for(N * C, [&](i64 lo, i64 hi) {
            for (i64 nc = lo; nc < hi; ++nc) {
                double* gp = g.data() + nc * H * W;
                const double* gop = go.data() + nc * PH * PW;
                for (i64 oh = 0; oh < PH; ++oh)
                    for (i64 ow = 0; ow < PW; ++ow) {
                        const i64 ih = oh - pad, iw = ow - pad;
                        if (mode == PadMode::zero) {
                            if (ih >= 0 && ih < H && iw >= 0 && iw < W)
                                gp[ih * W + iw] += gop[oh * PW + ow];
                        } else {
                            gp[reflect_index(ih, H) * W + reflect_index(iw, W)] +=
                                gop[oh * PW + ow];
                        }
                    }
            }
        });
    });
}

Var conv2d(const Var& x, const Var& w, const Var& b, i64 stride) {
    const auto& sx = x.shape();
    const auto& sw = w.shape();
    require(sx.size() == 4 && sw.size() == 4, "conv2d: expects 4D input and weight");
    require(sx[1] == sw[1], "conv2d: channel mismatch, input " + shape_str(sx) + " weight " +
                                shape_str(sw));
    require(b.shape().size() == 1 && b.dim(0) == sw[0], "conv2d: bias shape mismatch");
    require(stride >= 1, "conv2d: bad stride");
    const i64 N = sx[0], Cin = sx[1], H = sx[2], W = sx[3];
    const i64 Cout = sw[0], K = sw[2];
    require(sw[2] == sw[3], "conv2d: non-square kernel");
    require(H >= K && W >= K, "conv2d: input " + shape_str(sx) + " smaller than kernel");
    const i64 OH = (H - K) / stride + 1, OW = (W - K) / stride + 1;
    Tensor out({N, Cout, OH, OW});
    const double* px = x.val().data();
    const double* pw = w.val().data();
    const double* pb = b.val().data();
    parallel_for(N * Cout, [&](i64 lo, i64 hi) {
        for (i64 nco = lo; nco < hi; ++nco) {
            const i64 n = nco / Cout, co = nco % Cout;
            double* plane = out.data() + nco * OH * OW;
            std::fill_n(plane, OH * OW, pb[co]);
            for (i64 ci = 0; ci < Cin; ++ci) {
                const double* xc = px + (n * Cin + ci) * H * W;
                const double* wc = pw + (co * Cin + ci) * K * K;
                for (i64 kh = 0; kh < K; ++kh)
                    for (i64 kw = 0; kw < K; ++kw) {
                        const double wv = wc[kh * K + kw];
                        if (wv == 0.0) continue;
                        for (i64 oh = 0; oh < OH; ++oh) {
                            const double* xrow = xc + (oh * stride + kh) * W + kw;
                            double* orow = plane + oh * OW;
                            for (i64 ow = 0; ow < OW; ++ow) orow[ow] += wv * xrow[ow * stride];
                        }
                    }
            }
        }
    });
    return make_op(std::move(out), {x, w, b},
                   [N, Cin, H, W, Cout, K, OH, OW, stride](GraphNode& self) {
        const Tensor& go = self.grad;
        const Tensor& xv = self.inputs[0]->value;
        const Tensor& wv = self.inputs[1]->value;
        if (self.inputs[0]->needs_grad) {
            Tensor& gx = self.inputs[0]->grad_buffer();
            parallel_for(N * Cin, [&](i64 lo, i64 hi) {
                for (i64 nci = lo; nci < hi; ++nci) {
                    const i64 n = nci / Cin, ci = nci % Cin;
                    double* gxp = gx.data() + nci * H * W;
                    for (i64 co = 0; co < Cout; ++co) {
                        const double* gop = go.data() + (n * Cout + co) * OH * OW;
                        const double* wc = wv.data() + (co * Cin + ci) * K * K;
                        for (i64 oh = 0; oh < OH; ++oh)
                            for (i64 ow = 0; ow < OW; ++ow) {
                                const double g = gop[oh * OW + ow];
                                if (g == 0.0) continue;
                                double* gxrow = gxp + oh * stride * W + ow * stride;
                                for (i64 kh = 0; kh < K; ++kh)
                                    for (i64 kw = 0; kw < K; ++kw)
                                        gxrow[kh * W + kw] += g * wc[kh * K + kw];
                            }
                    }
                }
            });
        }
        if (self.inputs[1]->needs_grad) {
            Tensor& gw = self.inputs[1]->grad_buffer();
            parallel_for(Cout * Cin, [&](i64 lo, i64 hi) {
                for (i64 coci = lo; coci < hi; ++coci) {
                    const i64 co = coci / Cin, ci = coci % Cin;
                    double* gwc = gw.data() + coci * K * K;
                    for (i64 kh = 0; kh < K; ++kh)
                        for (i64 kw = 0; kw < K; ++kw) {
                            double acc = 0.0;
                            for (i64 n = 0; n < N; ++n) {
                                const double* xc = xv.data() + (n * Cin + ci) * H * W;
                                const double* gop = go.data() + (n * Cout + co) * OH * OW;
                                for (i64 oh = 0; oh < OH; ++oh) {
                                    const double* xrow = xc + (oh * stride + kh) * W + kw;
                                    const double* grow = gop + oh * OW;
                                    for (i64 ow = 0; ow < OW; ++ow)
                                        acc += grow[ow] * xrow[ow * stride];
                                }
                            }
                            gwc[kh * K + kw] += acc;
                        }
                }
            });
        }
        if (self.inputs[2]->needs_grad) {
            Tensor& gb = self.inputs[2]->grad_buffer();
            for (i64 n = 0; n < N; ++n)
                for (i64 co = 0; co < Cout; ++co) {
                    const double* gop = go.data() + (n * Cout + co) * OH * OW;
                    double acc = 0.0;
                    for (i64 i = 0; i < OH * OW; ++i) acc += gop[i];
                    gb[co] += acc;
                }
        }
    });
}

Var conv_transpose2d(const Var& x, const Var& w, const Var& b, i64 stride, i64 pad,
                     i64 output_pad) {
    const auto& sx = x.shape();
    const auto& sw = w.shape();
    require(sx.size() == 4 && sw.size() == 4, "conv_transpose2d: expects 4D input and weight");
    require(sx[1] == sw[0], "conv_transpose2d: channel mismatch, input " + shape_str(sx) +
                                " weight " + shape_str(sw));
    const i64 N = sx[0], Cin = sx[1], H = sx[2], W = sx[3];
    const i64 Cout = sw[1], K = sw[2];
    require(sw[2] == sw[3], "conv_transpose2d: non-square kernel");
    require(b.shape().size() == 1 && b.dim(0) == Cout, "conv_transpose2d: bias shape mismatch");
    require(stride >= 1 && pad >= 0 && output_pad >= 0 && output_pad < stride,
            "conv_transpose2d: bad stride/pad");
    const i64 OH = (H - 1) * stride - 2 * pad + K + output_pad;
    const i64 OW = (W - 1) * stride - 2 * pad + K + output_pad;
    require(OH >= 1 && OW >= 1, "conv_transpose2d: empty output");
    Tensor out({N, Cout, OH, OW});
    const double* px = x.val().data();
    const double* pw = w.val().data();
    const double* pb = b.val().data();
    parallel_for(N * Cout, [&](i64 lo, i64 hi) {
        for (i64 nco = lo; nco < hi; ++nco) {
            const i64 n = nco / Cout, co = nco % Cout;
            double* plane = out.data() + nco * OH * OW;
            std::fill_n(plane, OH * OW, pb[co]);
            for (i64 ci = 0; ci < Cin; ++ci) {
                const double* xc = px + (n * Cin + ci) * H * W;
                const double* wc = pw + (ci * Cout + co) * K * K;
                for (i64 ih = 0; ih < H; ++ih)
                    for (i64 iw = 0; iw < W; ++iw) {
                        const double xval = xc[ih * W + iw];
                        if (xval == 0.0) continue;
                        for (i64 kh = 0; kh < K; ++kh) {
                            const i64 oh = ih * stride + kh - pad;
                            if (oh < 0 || oh >= OH) continue;
                            for (i64 kw = 0; kw < K; ++kw) {
                                const i64 ow = iw * stride + kw - pad;
                                if (ow < 0 || ow >= OW) continue;
                                plane[oh * OW + ow] += xval * wc[kh * K + kw];
                            }
                        }
                    }
            }
        }
    });
    return make_op(std::move(out), {x, w, b},
                   [N, Cin, H, W, Cout, K, OH, OW, stride, pad](GraphNode& self) {
        const Tensor& go = self.grad;
        const Tensor& xv = self.inputs[0]->value;
        const Tensor& wv = self.inputs[1]->value;
        if (self.inputs[0]->needs_grad) {
            Tensor& gx = self.inputs[0]->grad_buffer();
            parallel_for(N * Cin, [&](i64 lo, i64 hi) {
                for (i64 nci = lo; nci < hi; ++nci) {
                    const i64 n = nci / Cin, ci = nci % Cin;
                    double* gxp = gx.data() + nci * H * W;
                    for (i64 co = 0; co < Cout; ++co) {
                        const double* gop = go.data() + (n * Cout + co) * OH * OW;
                        const double* wc = wv.data() + (ci * Cout + co) * K * K;
                        for (i64 ih = 0; ih < H; ++ih)
                            for (i64 iw = 0; iw < W; ++iw) {
                                double acc = 0.0;
                                for (i64 kh = 0; kh < K; ++kh) {
                                    const i64 oh = ih * stride + kh - pad;
                                    if (oh < 0 || oh >= OH) continue;
                                    for (i64 kw = 0; kw < K; ++kw) {
                                        const i64 ow = iw * stride + kw - pad;
                                        if (ow < 0 || ow >= OW) continue;
                                        acc += gop[oh * OW + ow] * wc[kh * K + kw];
                                    }
                                }
                                gxp[ih * W + iw] += acc;
                            }
                    }
                }
            });
        }
        if (self.inputs[1]->needs_grad) {
            Tensor& gw = self.inputs[1]->grad_buffer();
            parallel_for(Cin * Cout, [&](i64 lo, i64 hi) {
                for (i64 cico = lo; cico < hi; ++cico) {
                    const i64 ci = cico / Cout, co = cico % Cout;
                    double* gwc = gw.data() + cico * K * K;
                    for (i64 n = 0; n < N; ++n) {
                        const double* xc = xv.data() + (n * Cin + ci) * H * W;
                        const double* gop = go.data() + (n * Cout + co) * OH * OW;
                        for (i64 ih = 0; ih < H; ++ih)
                            for (i64 iw = 0; iw < W; ++iw) {
                                const double xval = xc[ih * W + iw];
                                if (xval == 0.0) continue;
                                for (i64 kh = 0; kh < K; ++kh) {
                                    const i64 oh = ih * stride + kh - pad;
                                    if (oh < 0 || oh >= OH) continue;
                                    for (i64 kw = 0; kw < K; ++kw) {
                                        const i64 ow = iw * stride + kw - pad;
                                        if (ow < 0 || ow >= OW) continue;
                                        gwc[kh * K + kw] += xval * gop[oh * OW + ow];
                                    }
                                }
                            }
                    }
                }
            });
        }
        if (self.inputs[2]->needs_grad) {
            Tensor& gb = self.inputs[2]->grad_buffer();
            for (i64 n = 0; n < N; ++n)
                for (i64 co = 0; co < Cout; ++co) {
                    const double* gop = go.data() + (n * Cout + co) * OH * OW;
                    double acc = 0.0;
                    for (i64 i = 0; i < OH * OW; ++i) acc += gop[i];
                    gb[co] += acc;
                }
        }
    });
}

namespace {

// Shared normalization backward: gx = inv * (gg - mean(gg) - xhat * mean(gg*xhat))
// per group, where gg = go * gamma broadcast over the group.
struct NormSaved {
    Tensor xhat;
    std::vector<double> inv;  // one per group
};

}  // namespace

Var instance_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    const auto& s = x.shape();
    require(s.size() == 4, "instance_norm: expects 4D input");
    const i64 N = s[0], C = s[1], H = s[2], W = s[3], M = H * W;
    require(gamma.shape() == std::vector<i64>{C} && beta.shape() == std::vector<i64>{C},
            "instance_norm: affine params must have shape (C)");
    auto saved = std::make_shared<NormSaved>();
    saved->xhat = Tensor({N, C, H, W});
    saved->inv.assign(static_cast<std::size_t>(N * C), 0.0);
    Tensor out({N, C, H, W});
    const double* px = x.val().data();
    const double* pg = gamma.val().data();
    const double* pb = beta.val().data();
    parallel_for(N * C, [&](i64 lo, i64 hi) {
        for (i64 nc = lo; nc < hi; ++nc) {
            const i64 c = nc % C;
            const double* xp = px + nc * M;
            double mu = 0.0;
            for (i64 i = 0; i < M; ++i) mu += xp[i];
            mu /= static_cast<double>(M);
            double var = 0.0;
            for (i64 i = 0; i < M; ++i) {
                const double d = xp[i] - mu;
                var += d * d;
            }
            var /= static_cast<double>(M);
            const double inv = 1.0 / std::sqrt(var + eps);
            saved->inv[static_cast<std::size_t>(nc)] = inv;
            double* xh = saved->xhat.data() + nc * M;
            double* op = out.data() + nc * M;
            for (i64 i = 0; i < M; ++i) {
                xh[i] = (xp[i] - mu) * inv;
                op[i] = pg[c] * xh[i] + pb[c];
            }
        }
    });
    return make_op(std::move(out), {x, gamma, beta}, [N, C, M, saved](GraphNode& self) {
        const Tensor& go = self.grad;
        const Tensor& gv = self.inputs[1]->value;
        if (self.inputs[0]->needs_grad) {
            Tensor& gx = self.inputs[0]->grad_buffer();
            parallel_for(N * C, [&](i64 lo, i64 hi) {
                for (i64 nc = lo; nc < hi; ++nc) {
                    const i64 c = nc % C;
                    const double g = gv[c];
                    const double inv = saved->inv[static_cast<std::size_t>(nc)];
                    const double* gop = go.data() + nc * M;
                    const double* xh = saved->xhat.data() + nc * M;
                    double m1 = 0.0, m2 = 0.0;
                    for (i64 i = 0; i < M; ++i) {
                        m1 += gop[i] * g;
                        m2 += gop[i] * g * xh[i];
                    }
                    m1 /= static_cast<double>(M);
                    m2 /= static_cast<double>(M);
                    double* gxp = gx.data() + nc * M;
                    for (i64 i = 0; i < M; ++i)
                        gxp[i] += inv * (gop[i] * g - m1 - xh[i] * m2);
                }
            });
        }
        if (self.inputs[1]->needs_grad) {
            Tensor& gg = self.inputs[1]->grad_buffer();
            for (i64 nc = 0; nc < N * C; ++nc) {
                const i64 c = nc % C;
                const double* gop = go.data() + nc * M;
                const double* xh = saved->xhat.data() + nc * M;
                double acc = 0.0;
                for (i64 i = 0; i < M; ++i) acc += gop[i] * xh[i];
                gg[c] += acc;
            }
        }
        if (self.inputs[2]->needs_grad) {
            Tensor& gb = self.inputs[2]->grad_buffer();
            for (i64 nc = 0; nc < N * C; ++nc) {
                const i64 c = nc % C;
                const double* gop = go.data() + nc * M;
                double acc = 0.0;
                for (i64 i = 0; i < M; ++i) acc += gop[i];
                gb[c] += acc;
            }
        }
    });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    const auto& s = x.shape();
    require(!s.empty(), "layer_norm: empty shape");
    const i64 D = s.back();
    const i64 R = x.val().numel() / D;
    require(gamma.shape() == std::vector<i64>{D} && beta.shape() == std::vector<i64>{D},
            "layer_norm: affine params must have shape (D)");
    auto saved = std::make_shared<NormSaved>();
    saved->xhat = Tensor(x.val().shape);
    saved->inv.assign(static_cast<std::size_t>(R), 0.0);
    Tensor out(x.val().shape);
    const double* px = x.val().data();
    const double* pg = gamma.val().data();
    const double* pb = beta.val().data();
    parallel_for(R, [&](i64 lo, i64 hi) {
        for (i64 r = lo; r < hi; ++r) {
            const double* xp = px + r * D;
            double mu = 0.0;
            for (i64 i = 0; i < D; ++i) mu += xp[i];
            mu /= static_cast<double>(D);
            double var = 0.0;
            for (i64 i = 0; i < D; ++i) {
                const double d = xp[i] - mu;
                var += d * d;
            }
            var /= static_cast<double>(D);
            const double inv = 1.0 / std::sqrt(var + eps);
            saved->inv[static_cast<std::size_t>(r)] = inv;
            double* xh = saved->xhat.data() + r * D;
            double* op = out.data() + r * D;
            for (i64 i = 0; i < D; ++i) {
                xh[i] = (xp[i] - mu) * inv;
                op[i] = pg[i] * xh[i] + pb[i];
            }
        }
    });
    return make_op(std::move(out), {x, gamma, beta}, [R, D, saved](GraphNode& self) {
        const Tensor& go = self.grad;
        const Tensor& gv = self.inputs[1]->value;
        if (self.inputs[0]->needs_grad) {
            Tensor& gx = self.inputs[0]->grad_buffer();
            parallel_for(R, [&](i64 lo, i64 hi) {
                for (i64 r = lo; r < hi; ++r) {
                    const double inv = saved->inv[static_cast<std::size_t>(r)];
                    const double* gop = go.data() + r * D;
                    const double* xh = saved->xhat.data() + r * D;
                    double m1 = 0.0, m2 = 0.0;
                    for (i64 i = 0; i < D; ++i) {
                        const double gg = gop[i] * gv[i];
                        m1 += gg;
                        m2 += gg * xh[i];
                    }
                    m1 /= static_cast<double>(D);
                    m2 /= static_cast<double>(D);
                    double* gxp = gx.data() + r * D;
                    for (i64 i = 0; i < D; ++i)
                        gxp[i] += inv * (gop[i] * gv[i] - m1 - xh[i] * m2);
                }
            });
        }
        if (self.inputs[1]->needs_grad) {
            Tensor& gg = self.inputs[1]->grad_buffer();
            for (i64 r = 0; r < R; ++r) {
                const double* gop = go.data() + r * D;
                const double* xh = saved->xhat.data() + r * D;
                for (i64 i = 0; i < D; ++i) gg[i] += gop[i] * xh[i];
            }
        }
        if (self.inputs[2]->needs_grad) {
            Tensor& gb = self.inputs[2]->grad_buffer();
            for (i64 r = 0; r < R; ++r) {
                const double* gop = go.data() + r * D;
                for (i64 i = 0; i < D; ++i) gb[i] += gop[i];
            }
        }
    });
}

Var softmax_lastdim(const Var& x) {
    const auto& s = x.shape();
    require(!s.empty(), "softmax: empty shape");
    const i64 D = s.back();
    const i64 R = x.val().numel() / D;
    Tensor out(x.val().shape);
    const double* px = x.val().data();
    parallel_for(R, [&](i64 lo, i64 hi) {
        for (i64 r = lo; r < hi; ++r) {
            const double* xp = px + r * D;
            double* op = out.data() + r * D;
            double mx = xp[0];
            for (i64 i = 1; i < D; ++i) mx = std::max(mx, xp[i]);
            double z = 0.0;
            for (i64 i = 0; i < D; ++i) {
                op[i] = std::exp(xp[i] - mx);
                z += op[i];
            }
            for (i64 i = 0; i < D; ++i) op[i] /= z;
        }
    });
    Tensor y = out;
    return make_op(std::move(out), {x}, [R, D, y = std::move(y)](GraphNode& self) {
        auto& in = *self.inputs[0];
        if (!in.needs_grad) return;
        Tensor& gx = in.grad_buffer();
        const Tensor& go = self.grad;
        parallel_for(R, [&](i64 lo, i64 hi) {
            for (i64 r = lo; r < hi; ++r) {
                const double* yp = y.data() + r * D;
                const double* gop = go.data() + r * D;
                double dot = 0.0;
                for (i64 i = 0; i < D; ++i) dot += gop[i] * yp[i];
                double* gxp = gx.data() + r * D;
                for (i64 i = 0; i < D; ++i) gxp[i] += yp[i] * (gop[i] - dot);
            }
        });
    });
}

Var dropout(const Var& x, double p, Rng& rng, bool training) {
    require(p >= 0.0 && p < 1.0, "dropout: probability out of range");
    if (!training || p == 0.0) return x;
    const double keep = 1.0 - p;
    const double scl = 1.0 / keep;
    Tensor mask(x.val().shape);
    // Mask sampling is sequential so the RNG stream is schedule-independent.
    for (double& m : mask.v) m = rng.uniform() < keep ? scl : 0.0;
    Tensor out = x.val();
    for (i64 i = 0; i < out.numel(); ++i) out[i] *= mask[i];
    return elementwise(x, std::move(out), [mask = std::move(mask)](const Tensor& go, Tensor& g) {
        for (i64 i = 0; i < g.numel(); ++i) g[i] += mask[i] * go[i];
    });
}

Var global_avg_pool(const Var& x) {
    const auto& s = x.shape();
    require(s.size() == 4, "global_avg_pool: expects 4D input");
    const i64 N = s[0], C = s[1], M = s[2] * s[3];
    Tensor out({N, C});
    const double* px = x.val().data();
    for (i64 nc = 0; nc < N * C; ++nc) {
        double acc = 0.0;
        const double* xp = px + nc * M;
        for (i64 i = 0; i < M; ++i) acc += xp[i];
        out[nc] = acc / static_cast<double>(M);
    }
    return make_op(std::move(out), {x}, [N, C, M](GraphNode& self) {
        auto& in = *self.inputs[0];
        if (!in.needs_grad) return;
        Tensor& gx = in.grad_buffer();
        const Tensor& go = self.grad;
        for (i64 nc = 0; nc < N * C; ++nc) {
            const double g = go[nc] / static_cast<double>(M);
            double* gxp = gx.data() + nc * M;
            for (i64 i = 0; i < M; ++i) gxp[i] += g;
        }
    });
}

Var gather_classes(const Var& probs, const std::vector<i64>& labels) {
    const auto& s = probs.shape();
    require(s.size() == 2, "gather_classes: expects (N,K) input");
    const i64 N = s[0], K = s[1];
    require(static_cast<i64>(labels.size()) == N, "gather_classes: label count mismatch");
    for (i64 lab : labels)
        require(lab >= 0 && lab < K, "gather_classes: label " + std::to_string(lab) +
                                         " outside class set of size " + std::to_string(K));
    Tensor out({N});
    for (i64 n = 0; n < N; ++n) out[n] = probs.val()[n * K + labels[static_cast<std::size_t>(n)]];
    return make_op(std::move(out), {probs}, [labels, K](GraphNode& self) {
        auto& in = *self.inputs[0];
        if (!in.needs_grad) return;
        Tensor& g = in.grad_buffer();
        const i64 N = self.grad.numel();
        for (i64 n = 0; n < N; ++n)
            g[n * K + labels[static_cast<std::size_t>(n)]] += self.grad[n];
    });
}

}  // namespace resvit
