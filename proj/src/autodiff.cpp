#include "volseg/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace volseg::ad {

NodeId Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Tape::leaf(Tensor value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    return push(std::move(n));
}

Tensor& Tape::grad_buffer(NodeId id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor(n.value.shape());
    return n.grad;
}

const Tensor& Tape::grad(NodeId id) { return grad_buffer(id); }

void Tape::backward(NodeId loss) {
    Node& top = nodes_[loss];
    if (top.value.numel() != 1)
        throw std::logic_error("backward: loss node must be scalar");
    grad_buffer(loss)[0] = 1.0;
    for (NodeId i = loss; i >= 0; --i) {
        Node& n = nodes_[i];
        if (!n.requires_grad || !n.backward) continue;
        if (n.grad.empty()) continue;  // not on any path to the loss
        n.backward(*this);
    }
}

NodeId Tape::custom(Tensor value, std::vector<NodeId> parents,
                    std::function<void(Tape&)> backward_fn) {
    Node n;
    n.value = std::move(value);
    for (NodeId p : parents) n.requires_grad |= nodes_[p].requires_grad;
    if (n.requires_grad) n.backward = std::move(backward_fn);
    return push(std::move(n));
}

NodeId Tape::add(NodeId a, NodeId b) {
    const Tensor& va = value(a);
    const Tensor& vb = value(b);
    if (!va.same_shape(vb))
        throw std::invalid_argument("add: shape mismatch " + va.shape_str() + " vs " + vb.shape_str());
    Tensor out(va.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = va[i] + vb[i];
    NodeId self = custom(std::move(out), {a, b}, nullptr);
    nodes_[self].backward = [self, a, b](Tape& t) {
        const Tensor& g = t.node(self).grad;
        for (NodeId p : {a, b}) {
            if (!t.requires_grad(p)) continue;
            Tensor& pg = t.grad_buffer(p);
            for (int64_t i = 0; i < g.numel(); ++i) pg[i] += g[i];
        }
    };
    return self;
}

NodeId Tape::sub(NodeId a, NodeId b) {
    const Tensor& va = value(a);
    const Tensor& vb = value(b);
    if (!va.same_shape(vb)) throw std::invalid_argument("sub: shape mismatch");
    Tensor out(va.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = va[i] - vb[i];
    NodeId self = custom(std::move(out), {a, b}, nullptr);
    nodes_[self].backward = [self, a, b](Tape& t) {
        const Tensor& g = t.node(self).grad;
        if (t.requires_grad(a)) {
            Tensor& pg = t.grad_buffer(a);
            for (int64_t i = 0; i < g.numel(); ++i) pg[i] += g[i];
        }
        if (t.requires_grad(b)) {
            Tensor& pg = t.grad_buffer(b);
            for (int64_t i = 0; i < g.numel(); ++i) pg[i] -= g[i];
        }
    };
    return self;
}

NodeId Tape::affine(NodeId x, double scale, double shift) {
    const Tensor& vx = value(x);
    Tensor out(vx.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = scale * vx[i] + shift;
    NodeId self = custom(std::move(out), {x}, nullptr);
    nodes_[self].backward = [self, x, scale](Tape& t) {
        if (!t.requires_grad(x)) return;
        const Tensor& g = t.node(self).grad;
        Tensor& pg = t.grad_buffer(x);
        for (int64_t i = 0; i < g.numel(); ++i) pg[i] += scale * g[i];
    };
    return self;
}

NodeId Tape::leaky_relu(NodeId x, double slope) {
    const Tensor& vx = value(x);
    Tensor out(vx.shape());
    for (int64_t i = 0; i < out.numel(); ++i) {
        const double v = vx[i];
        out[i] = v >= 0.0 ? v : slope * v;
    }
    NodeId self = custom(std::move(out), {x}, nullptr);
    nodes_[self].backward = [self, x, slope](Tape& t) {
        if (!t.requires_grad(x)) return;
        const Tensor& g = t.node(self).grad;
        const Tensor& vx = t.value(x);
        Tensor& pg = t.grad_buffer(x);
        for (int64_t i = 0; i < g.numel(); ++i)
            pg[i] += g[i] * (vx[i] >= 0.0 ? 1.0 : slope);
    };
    return self;
}

NodeId Tape::sigmoid(NodeId x) {
    const Tensor& vx = value(x);
    Tensor out(vx.shape());
    for (int64_t i = 0; i < out.numel(); ++i) {
        const double v = vx[i];
        if (v >= 0.0) {
            out[i] = 1.0 / (1.0 + std::exp(-v));
        } else {
            const double e = std::exp(v);
            out[i] = e / (1.0 + e);
        }
    }
    NodeId self = custom(std::move(out), {x}, nullptr);
    nodes_[self].backward = [self, x](Tape& t) {
        if (!t.requires_grad(x)) return;
        const Tensor& g = t.node(self).grad;
        const Tensor& y = t.value(self);
        Tensor& pg = t.grad_buffer(x);
        for (int64_t i = 0; i < g.numel(); ++i) pg[i] += g[i] * y[i] * (1.0 - y[i]);
    };
    return self;
}

NodeId Tape::concat_channels(NodeId a, NodeId b) {
    const Tensor& va = value(a);
    const Tensor& vb = value(b);
    if (va.rank() != 5 || vb.rank() != 5)
        throw std::invalid_argument("concat_channels: expected rank-5 tensors");
    for (size_t d : {size_t{0}, size_t{2}, size_t{3}, size_t{4}})
        if (va.dim(d) != vb.dim(d))
            throw std::invalid_argument("concat_channels: non-channel dims differ");
    const int64_t n = va.dim(0), ca = va.dim(1), cb = vb.dim(1);
    const int64_t sp = va.dim(2) * va.dim(3) * va.dim(4);
    Tensor out({n, ca + cb, va.dim(2), va.dim(3), va.dim(4)});
    for (int64_t i = 0; i < n; ++i) {
        double* dst = out.data() + i * (ca + cb) * sp;
        std::memcpy(dst, va.data() + i * ca * sp, sizeof(double) * ca * sp);
        std::memcpy(dst + ca * sp, vb.data() + i * cb * sp, sizeof(double) * cb * sp);
    }
    NodeId self = custom(std::move(out), {a, b}, nullptr);
    nodes_[self].backward = [self, a, b, n, ca, cb, sp](Tape& t) {
        const Tensor& g = t.node(self).grad;
        if (t.requires_grad(a)) {
            Tensor& pg = t.grad_buffer(a);
            for (int64_t i = 0; i < n; ++i) {
                const double* src = g.data() + i * (ca + cb) * sp;
                double* dst = pg.data() + i * ca * sp;
                for (int64_t j = 0; j < ca * sp; ++j) dst[j] += src[j];
            }
        }
        if (t.requires_grad(b)) {
            Tensor& pg = t.grad_buffer(b);
            for (int64_t i = 0; i < n; ++i) {
                const double* src = g.data() + i * (ca + cb) * sp + ca * sp;
                double* dst = pg.data() + i * cb * sp;
                for (int64_t j = 0; j < cb * sp; ++j) dst[j] += src[j];
            }
        }
    };
    return self;
}

NodeId Tape::instance_norm(NodeId x, NodeId gamma, NodeId beta, double eps) {
    const Tensor& vx = value(x);
    if (vx.rank() != 5) throw std::invalid_argument("instance_norm: expected [n,c,z,y,x]");
    const int64_t n = vx.dim(0), c = vx.dim(1);
    const int64_t sp = vx.dim(2) * vx.dim(3) * vx.dim(4);
    const Tensor& g = value(gamma);
    const Tensor& bt = value(beta);
    if (g.numel() != c || bt.numel() != c)
        throw std::invalid_argument("instance_norm: affine size mismatch");

    auto xhat = std::make_shared<Tensor>(vx.shape());
    auto inv_std = std::make_shared<Tensor>(std::vector<int64_t>{n, c});
    Tensor out(vx.shape());
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t ch = 0; ch < c; ++ch) {
            const double* px = vx.data() + (i * c + ch) * sp;
            double mean = 0.0;
            for (int64_t v = 0; v < sp; ++v) mean += px[v];
            mean /= static_cast<double>(sp);
            double var = 0.0;
            for (int64_t v = 0; v < sp; ++v) {
                const double d = px[v] - mean;
                var += d * d;
            }
            var /= static_cast<double>(sp);
            const double is = 1.0 / std::sqrt(var + eps);
            (*inv_std)[i * c + ch] = is;
            double* ph = xhat->data() + (i * c + ch) * sp;
            double* po = out.data() + (i * c + ch) * sp;
            const double gc = g[ch], bc = bt[ch];
            for (int64_t v = 0; v < sp; ++v) {
                const double h = (px[v] - mean) * is;
                ph[v] = h;
                po[v] = gc * h + bc;
            }
        }
    }
    NodeId self = custom(std::move(out), {x, gamma, beta}, nullptr);
    nodes_[self].backward = [self, x, gamma, beta, xhat, inv_std, n, c, sp](Tape& t) {
        const Tensor& go = t.node(self).grad;
        const Tensor& gm = t.value(gamma);
        const bool need_x = t.requires_grad(x);
        const bool need_g = t.requires_grad(gamma);
        const bool need_b = t.requires_grad(beta);
        Tensor* gx = need_x ? &t.grad_buffer(x) : nullptr;
        Tensor* gg = need_g ? &t.grad_buffer(gamma) : nullptr;
        Tensor* gb = need_b ? &t.grad_buffer(beta) : nullptr;
        for (int64_t i = 0; i < n; ++i) {
            for (int64_t ch = 0; ch < c; ++ch) {
                const double* pgo = go.data() + (i * c + ch) * sp;
                const double* ph = xhat->data() + (i * c + ch) * sp;
                double sum_g = 0.0, sum_gh = 0.0;
                for (int64_t v = 0; v < sp; ++v) {
                    sum_g += pgo[v];
                    sum_gh += pgo[v] * ph[v];
                }
                if (gg) (*gg)[ch] += sum_gh;
                if (gb) (*gb)[ch] += sum_g;
                if (gx) {
                    const double is = (*inv_std)[i * c + ch];
                    const double gc = gm[ch];
                    const double m = static_cast<double>(sp);
                    double* pgx = gx->data() + (i * c + ch) * sp;
                    for (int64_t v = 0; v < sp; ++v)
                        pgx[v] += gc * is * (pgo[v] - sum_g / m - ph[v] * (sum_gh / m));
                }
            }
        }
    };
    return self;
}

NodeId Tape::global_avg_pool(NodeId x) {
    const Tensor& vx = value(x);
    if (vx.rank() != 5) throw std::invalid_argument("global_avg_pool: expected [n,c,z,y,x]");
    const int64_t n = vx.dim(0), c = vx.dim(1);
    const int64_t sp = vx.dim(2) * vx.dim(3) * vx.dim(4);
    if (sp == 0) throw std::invalid_argument("global_avg_pool: empty spatial extent");
    Tensor out({n, c});
    for (int64_t i = 0; i < n * c; ++i) {
        const double* px = vx.data() + i * sp;
        double s = 0.0;
        for (int64_t v = 0; v < sp; ++v) s += px[v];
        out[i] = s / static_cast<double>(sp);
    }
    NodeId self = custom(std::move(out), {x}, nullptr);
    nodes_[self].backward = [self, x, sp](Tape& t) {
        if (!t.requires_grad(x)) return;
        const Tensor& g = t.node(self).grad;
        Tensor& pg = t.grad_buffer(x);
        for (int64_t i = 0; i < g.numel(); ++i) {
            const double gi = g[i] / static_cast<double>(sp);
            double* p = pg.data() + i * sp;
            for (int64_t v = 0; v < sp; ++v) p[v] += gi;
        }
    };
    return self;
}

NodeId Tape::linear(NodeId x, NodeId w) {
    const Tensor& vx = value(x);
    const Tensor& vw = value(w);
    if (vx.rank() != 2 || vw.rank() != 2 || vx.dim(1) != vw.dim(1))
        throw std::invalid_argument("linear: dimension mismatch");
    const int64_t n = vx.dim(0), fi = vx.dim(1), fo = vw.dim(0);
    Tensor out({n, fo});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t f = 0; f < fo; ++f) {
            double s = 0.0;
            for (int64_t j = 0; j < fi; ++j) s += vw[f * fi + j] * vx[i * fi + j];
            out[i * fo + f] = s;
        }
    NodeId self = custom(std::move(out), {x, w}, nullptr);
    nodes_[self].backward = [self, x, w, n, fi, fo](Tape& t) {
        const Tensor& g = t.node(self).grad;
        const Tensor& vx = t.value(x);
        const Tensor& vw = t.value(w);
        if (t.requires_grad(x)) {
            Tensor& pg = t.grad_buffer(x);
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = 0; j < fi; ++j) {
                    double s = 0.0;
                    for (int64_t f = 0; f < fo; ++f) s += g[i * fo + f] * vw[f * fi + j];
                    pg[i * fi + j] += s;
                }
        }
        if (t.requires_grad(w)) {
            Tensor& pg = t.grad_buffer(w);
            for (int64_t f = 0; f < fo; ++f)
                for (int64_t j = 0; j < fi; ++j) {
                    double s = 0.0;
                    for (int64_t i = 0; i < n; ++i) s += g[i * fo + f] * vx[i * fi + j];
                    pg[f * fi + j] += s;
                }
        }
    };
    return self;
}

NodeId Tape::feature_norm(NodeId x, NodeId gamma, NodeId beta, double eps) {
    const Tensor& vx = value(x);
    if (vx.rank() != 2) throw std::invalid_argument("feature_norm: expected [n,f]");
    const int64_t n = vx.dim(0), f = vx.dim(1);
    if (value(gamma).numel() != f || value(beta).numel() != f)
        throw std::invalid_argument("feature_norm: affine size mismatch");
    auto xhat = std::make_shared<Tensor>(vx.shape());
    auto inv_std = std::make_shared<Tensor>(std::vector<int64_t>{n});
    const Tensor& g = value(gamma);
    const Tensor& bt = value(beta);
    Tensor out(vx.shape());
    for (int64_t i = 0; i < n; ++i) {
        const double* px = vx.data() + i * f;
        double mean = 0.0;
        for (int64_t j = 0; j < f; ++j) mean += px[j];
        mean /= static_cast<double>(f);
        double var = 0.0;
        for (int64_t j = 0; j < f; ++j) {
            const double d = px[j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(f);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[i] = is;
        for (int64_t j = 0; j < f; ++j) {
            const double h = (px[j] - mean) * is;
            (*xhat)[i * f + j] = h;
            out[i * f + j] = g[j] * h + bt[j];
        }
    }
    NodeId self = custom(std::move(out), {x, gamma, beta}, nullptr);
    nodes_[self].backward = [self, x, gamma, beta, xhat, inv_std, n, f](Tape& t) {
        const Tensor& go = t.node(self).grad;
        const Tensor& gm = t.value(gamma);
        for (int64_t i = 0; i < n; ++i) {
            const double* pgo = go.data() + i * f;
            const double* ph = xhat->data() + i * f;
            double sum_g = 0.0, sum_gh = 0.0;
            // Sums run over gamma-scaled grads for the x path.
            for (int64_t j = 0; j < f; ++j) {
                sum_g += pgo[j] * gm[j];
                sum_gh += pgo[j] * gm[j] * ph[j];
            }
            if (t.requires_grad(gamma)) {
                Tensor& gg = t.grad_buffer(gamma);
                for (int64_t j = 0; j < f; ++j) gg[j] += pgo[j] * ph[j];
            }
            if (t.requires_grad(beta)) {
                Tensor& gb = t.grad_buffer(beta);
                for (int64_t j = 0; j < f; ++j) gb[j] += pgo[j];
            }
            if (t.requires_grad(x)) {
                const double is = (*inv_std)[i];
                const double m = static_cast<double>(f);
                Tensor& gx = t.grad_buffer(x);
                for (int64_t j = 0; j < f; ++j)
                    gx[i * f + j] +=
                        is * (pgo[j] * gm[j] - sum_g / m - ph[j] * (sum_gh / m));
            }
        }
    };
    return self;
}

NodeId Tape::channel_scale(NodeId x, NodeId s) {
    const Tensor& vx = value(x);
    const Tensor& vs = value(s);
    if (vx.rank() != 5 || vs.rank() != 2 || vx.dim(0) != vs.dim(0) || vx.dim(1) != vs.dim(1))
        throw std::invalid_argument("channel_scale: shape mismatch");
    const int64_t nc = vx.dim(0) * vx.dim(1);
    const int64_t sp = vx.dim(2) * vx.dim(3) * vx.dim(4);
    Tensor out(vx.shape());
    for (int64_t i = 0; i < nc; ++i) {
        const double sc = vs[i];
        const double* px = vx.data() + i * sp;
        double* po = out.data() + i * sp;
        for (int64_t v = 0; v < sp; ++v) po[v] = sc * px[v];
    }
    NodeId self = custom(std::move(out), {x, s}, nullptr);
    nodes_[self].backward = [self, x, s, nc, sp](Tape& t) {
        const Tensor& g = t.node(self).grad;
        const Tensor& vx = t.value(x);
        const Tensor& vs = t.value(s);
        if (t.requires_grad(x)) {
            Tensor& pg = t.grad_buffer(x);
            for (int64_t i = 0; i < nc; ++i) {
                const double sc = vs[i];
                const double* pgo = g.data() + i * sp;
                double* p = pg.data() + i * sp;
                for (int64_t v = 0; v < sp; ++v) p[v] += sc * pgo[v];
            }
        }
        if (t.requires_grad(s)) {
            Tensor& pg = t.grad_buffer(s);
            for (int64_t i = 0; i < nc; ++i) {
                const double* pgo = g.data() + i * sp;
                const double* px = vx.data() + i * sp;
                double acc = 0.0;
                for (int64_t v = 0; v < sp; ++v) acc += pgo[v] * px[v];
                pg[i] += acc;
            }
        }
    };
    return self;
}

NodeId Tape::weighted_sum(const std::vector<NodeId>& xs, const std::vector<double>& ws) {
    if (xs.empty() || xs.size() != ws.size())
        throw std::invalid_argument("weighted_sum: length mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < xs.size(); ++i) {
        if (value(xs[i]).numel() != 1)
            throw std::invalid_argument("weighted_sum: operands must be scalars");
        acc += ws[i] * value(xs[i])[0];
    }
    NodeId self = custom(Tensor::scalar(acc), xs, nullptr);
    auto xs_copy = xs;
    auto ws_copy = ws;
    nodes_[self].backward = [self, xs_copy, ws_copy](Tape& t) {
        const double g = t.node(self).grad[0];
        for (size_t i = 0; i < xs_copy.size(); ++i) {
            if (!t.requires_grad(xs_copy[i])) continue;
            t.grad_buffer(xs_copy[i])[0] += g * ws_copy[i];
        }
    };
    return self;
}

Tensor finite_difference(const std::function<double(const Tensor&)>& f,
                         const Tensor& theta, double step) {
    Tensor g(theta.shape());
    Tensor probe = theta;
    for (int64_t i = 0; i < theta.numel(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + step;
        const double fp = f(probe);
        probe[i] = orig - step;
        const double fm = f(probe);
        probe[i] = orig;
        g[i] = (fp - fm) / (2.0 * step);
    }
    return g;
}

double max_relative_error(const Tensor& a, const Tensor& b, double abs_floor) {
    if (!a.same_shape(b)) throw std::invalid_argument("max_relative_error: shape mismatch");
    double worst = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        const double denom = std::max({std::fabs(a[i]), std::fabs(b[i]), abs_floor});
        worst = std::max(worst, std::fabs(a[i] - b[i]) / denom);
    }
    return worst;
}

}  // namespace volseg::ad
