#include "vstab/autodiff.hpp"

#include <cmath>
#include <memory>
#include <string>

#include "vstab/error.hpp"

namespace vstab {

std::size_t shape_size(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw Error(ErrorCode::ShapeMismatch, "negative tensor extent");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

Tensor::Tensor(std::vector<int> s, double value) : shape(std::move(s)), data(shape_size(shape), value) {}

Tensor::Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != shape_size(shape)) {
        throw Error(ErrorCode::ShapeMismatch, "tensor data length does not match its shape");
    }
}

namespace {

void require_same_size(const Tensor& a, const Tensor& b, const char* op) {
    if (a.size() != b.size()) {
        throw Error(ErrorCode::ShapeMismatch, std::string(op) + ": operand sizes differ (" + std::to_string(a.size()) +
                                                  " vs " + std::to_string(b.size()) + ")");
    }
}

}  // namespace

Var Graph::push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Graph::Node& Graph::node(Var v) {
    if (v.id < 0 || v.id >= static_cast<int>(nodes_.size())) {
        throw Error(ErrorCode::GraphNotRecorded, "variable is not recorded on this graph");
    }
    return nodes_[static_cast<std::size_t>(v.id)];
}

const Graph::Node& Graph::node(Var v) const {
    if (v.id < 0 || v.id >= static_cast<int>(nodes_.size())) {
        throw Error(ErrorCode::GraphNotRecorded, "variable is not recorded on this graph");
    }
    return nodes_[static_cast<std::size_t>(v.id)];
}

std::vector<double>& Graph::grad_of(Var v) {
    Node& n = node(v);
    if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), 0.0);
    return n.grad;
}

const Tensor& Graph::value(Var v) const { return node(v).value; }

double Graph::scalar(Var v) const {
    const Tensor& t = value(v);
    if (t.size() != 1) throw Error(ErrorCode::ShapeMismatch, "node is not a scalar");
    return t.data[0];
}

const std::vector<std::uint8_t>& Graph::mask(Var v) const { return node(v).mask; }

const std::vector<double>& Graph::grad(Var v) const { return node(v).grad; }

void Graph::clear() { nodes_.clear(); }

Var Graph::constant(Tensor value, std::vector<std::uint8_t> mask) {
    if (!mask.empty() && mask.size() != value.size()) {
        throw Error(ErrorCode::ShapeMismatch, "mask length does not match tensor");
    }
    Node n;
    n.value = std::move(value);
    n.mask = std::move(mask);
    return push(std::move(n));
}

Var Graph::leaf(Tensor value) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = true;
    return push(std::move(n));
}

Var Graph::param(Tensor& tensor) {
    Node n;
    n.value = Tensor(tensor.shape, tensor.data);
    n.requires_grad = true;
    n.param = &tensor;
    return push(std::move(n));
}

Var Graph::conv2d(Var xv, Var wv, Var bv, int stride) {
    const Tensor& x = value(xv);
    const Tensor& w = value(wv);
    const Tensor& b = value(bv);
    if (x.shape.size() != 3 || w.shape.size() != 4 || b.shape.size() != 1 || stride < 1) {
        throw Error(ErrorCode::ShapeMismatch, "conv2d: expected x[C,H,W], w[O,C,k,k], b[O], stride >= 1");
    }
    const int C = x.shape[0], H = x.shape[1], W = x.shape[2];
    const int O = w.shape[0], k = w.shape[2];
    if (w.shape[1] != C || w.shape[3] != k || b.shape[0] != O) {
        throw Error(ErrorCode::ShapeMismatch, "conv2d: weight shape does not match input channels");
    }
    if (H < k || W < k) {
        throw Error(ErrorCode::ShapeMismatch, "conv2d: input smaller than kernel");
    }
    const int Ho = (H - k) / stride + 1;
    const int Wo = (W - k) / stride + 1;
    const std::size_t P = static_cast<std::size_t>(Ho) * Wo;
    const std::size_t Q = static_cast<std::size_t>(C) * k * k;

    // Patch index q = (c, ky, kx) over output positions p, read straight from x.
    Tensor out({O, Ho, Wo});
    for (int o = 0; o < O; ++o) {
        double* op = out.data.data() + static_cast<std::size_t>(o) * P;
        std::fill(op, op + P, b.data[static_cast<std::size_t>(o)]);
        const double* wp = w.data.data() + static_cast<std::size_t>(o) * Q;
        std::size_t q = 0;
        for (int c = 0; c < C; ++c) {
            for (int ky = 0; ky < k; ++ky) {
                for (int kx = 0; kx < k; ++kx) {
                    const double wt = wp[q++];
                    if (wt == 0.0) continue;
                    const double* base = x.data.data() + (static_cast<std::size_t>(c) * H + ky) * W + kx;
                    double* dst = op;
                    for (int oy = 0; oy < Ho; ++oy) {
                        const double* row = base + static_cast<std::size_t>(oy) * stride * W;
                        for (int ox = 0; ox < Wo; ++ox) *dst++ += wt * row[ox * stride];
                    }
                }
            }
        }
    }

    Node n;
    n.value = std::move(out);
    n.requires_grad = needs(xv) || needs(wv) || needs(bv);
    const int self = static_cast<int>(nodes_.size());
    n.backward = [=](Graph& g) {
        const std::vector<double>& go = g.nodes_[static_cast<std::size_t>(self)].grad;
        const Tensor& ww = g.value(wv);
        if (g.needs(bv)) {
            std::vector<double>& gb = g.grad_of(bv);
            for (int o = 0; o < O; ++o) {
                double s = 0.0;
                for (std::size_t i = 0; i < P; ++i) s += go[static_cast<std::size_t>(o) * P + i];
                gb[static_cast<std::size_t>(o)] += s;
            }
        }
        if (g.needs(wv)) {
            const Tensor& xx = g.value(xv);
            std::vector<double>& gw = g.grad_of(wv);
            for (int o = 0; o < O; ++o) {
                const double* gop = go.data() + static_cast<std::size_t>(o) * P;
                std::size_t q = 0;
                for (int c = 0; c < C; ++c) {
                    for (int ky = 0; ky < k; ++ky) {
                        for (int kx = 0; kx < k; ++kx) {
                            const double* base = xx.data.data() + (static_cast<std::size_t>(c) * H + ky) * W + kx;
                            const double* gp = gop;
                            double acc = 0.0;
                            for (int oy = 0; oy < Ho; ++oy) {
                                const double* row = base + static_cast<std::size_t>(oy) * stride * W;
                                for (int ox = 0; ox < Wo; ++ox) acc += *gp++ * row[ox * stride];
                            }
                            gw[static_cast<std::size_t>(o) * Q + q++] += acc;
                        }
                    }
                }
            }
        }
        if (g.needs(xv)) {
            std::vector<double> gcols(Q * P, 0.0);
            for (int o = 0; o < O; ++o) {
                const double* gop = go.data() + static_cast<std::size_t>(o) * P;
                const double* wp = ww.data.data() + static_cast<std::size_t>(o) * Q;
                for (std::size_t q = 0; q < Q; ++q) {
                    const double wt = wp[q];
                    if (wt == 0.0) continue;
                    double* gc = gcols.data() + q * P;
                    for (std::size_t i = 0; i < P; ++i) gc[i] += wt * gop[i];
                }
            }
            std::vector<double>& gx = g.grad_of(xv);
            for (int c = 0; c < C; ++c) {
                double* gxp = gx.data() + static_cast<std::size_t>(c) * H * W;
                for (int ky = 0; ky < k; ++ky) {
                    for (int kx = 0; kx < k; ++kx) {
                        const double* src = gcols.data() + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * P;
                        for (int oy = 0; oy < Ho; ++oy) {
                            double* row = gxp + static_cast<std::size_t>(oy * stride + ky) * W + kx;
                            for (int ox = 0; ox < Wo; ++ox) row[ox * stride] += *src++;
                        }
                    }
                }
            }
        }
    };
    return push(std::move(n));
}

Var Graph::relu(Var xv) {
    const Tensor& x = value(xv);
    Tensor out(x.shape);
    for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = x.data[i] > 0.0 ? x.data[i] : 0.0;
    Node n;
    n.value = std::move(out);
    n.mask = node(xv).mask;
    n.requires_grad = needs(xv);
    const int self = static_cast<int>(nodes_.size());
    n.backward = [=](Graph& g) {
        const std::vector<double>& go = g.nodes_[static_cast<std::size_t>(self)].grad;
        const Tensor& xx = g.value(xv);
        std::vector<double>& gx = g.grad_of(xv);
        // Subgradient 0 at exactly 0.
        for (std::size_t i = 0; i < go.size(); ++i) {
            if (xx.data[i] > 0.0) gx[i] += go[i];
        }
    };
    return push(std::move(n));
}

Var Graph::spatial_mean(Var xv) {
    const Tensor& x = value(xv);
    if (x.shape.size() != 3) throw Error(ErrorCode::ShapeMismatch, "spatial_mean: expected [C,H,W]");
    const int C = x.shape[0];
    const std::size_t hw = static_cast<std::size_t>(x.shape[1]) * x.shape[2];
    Tensor out({C});
    for (int c = 0; c < C; ++c) {
        double s = 0.0;
        for (std::size_t i = 0; i < hw; ++i) s += x.data[static_cast<std::size_t>(c) * hw + i];
        out.data[static_cast<std::size_t>(c)] = s / static_cast<double>(hw);
    }
    Node n;
    n.value = std::move(out);
    n.requires_grad = needs(xv);
    const int self = static_cast<int>(nodes_.size());
    n.backward = [=](Graph& g) {
        const std::vector<double>& go = g.nodes_[static_cast<std::size_t>(self)].grad;
        std::vector<double>& gx = g.grad_of(xv);
        for (int c = 0; c < C; ++c) {
            const double v = go[static_cast<std::size_t>(c)] / static_cast<double>(hw);
            for (std::size_t i = 0; i < hw; ++i) gx[static_cast<std::size_t>(c) * hw + i] += v;
        }
    };
    return push(std::move(n));
}

Var Graph::add(Var av, Var bv) {
    const Tensor& a = value(av);
    const Tensor& b = value(bv);
    require_same_size(a, b, "add");
    Tensor out(a.shape);
    for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = a.data[i] + b.data[i];
    Node n;
    n.value = std::move(out);
    n.requires_grad = needs(av) || needs(bv);
    const int self = static_cast<int>(nodes_.size());
    n.backward = [=](Graph& g) {
        const std::vector<double>& go = g.nodes_[static_cast<std::size_t>(self)].grad;
        for (Var v : {av, bv}) {
            if (!g.needs(v)) continue;
            std::vector<double>& gv = g.grad_of(v);
            for (std::size_t i = 0; i < go.size(); ++i) gv[i] += go[i];
        }
    };
    return push(std::move(n));
}

Var Graph::sub(Var av, Var bv) {
    const Tensor& a = value(av);
    const Tensor& b = value(bv);
    require_same_size(a, b, "sub");
    Tensor out(a.shape);
    for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = a.data[i] - b.data[i];
    Node n;
    n.value = std::move(out);
    n.requires_grad = needs(av) || needs(bv);
    const int self = static_cast<int>(nodes_.size());
    n.backward = [=](Graph& g) {
        const std::vector<double>& go = g.nodes_[static_cast<std::size_t>(self)].grad;
        if (g.needs(av)) {
            std::vector<double>& ga = g.grad_of(av);
            for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
        }
        if (g.needs(bv)) {
            std::vector<double>& gb = g.grad_of(bv);
            for (std::size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
        }
    };
    return push(std::move(n));
}

Var Graph::mul(Var av, Var bv) {
    const Tensor& a = value(av);
    const Tensor& b = value(bv);
    require_same_size(a, b, "mul");
    Tensor out(a.shape);
    for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = a.data[i] * b.data[i];
    Node n;
    n.value = std::move(out);
    n.requires_grad = needs(av) || needs(bv);
    const int self = static_cast<int>(nodes_.size());
    n.backward = [=](Graph& g) {
        const std::vector<double>& go = g.nodes_[static_cast<std::size_t>(self)].grad;
        const Tensor& aa = g.value(av);
        const Tensor& bb = g.value(bv);
        if (g.needs(av)) {
            std::vector<double>& ga = g.grad_of(av);
            for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bb.data[i];
        }
        if (g.needs(bv)) {
            std::vector<double>& gb = g.grad_of(bv);
            for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * aa.data[i];
        }
    };
    return push(std::move(n));
}

Var Graph::scale(Var av, double s) {
    const Tensor& a = value(av);
    Tensor out(a.shape);
    for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = a.data[i] * s;
    Node n;
    n.value = std::move(out);
    n.mask = node(av).mask;
    n.requires_grad = needs(av);
    const int self = static_cast<int>(nodes_.size());
    n.backward = [=](Graph& g) {
        const std::vector<double>& go = g.nodes_[static_cast<std::size_t>(self)].grad;
        std::vector<double>& ga = g.grad_of(av);
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * s;
    };
    return push(std::move(n));
}

Var Graph::mul_const(Var av, const std::vector<double>& c) {
    const Tensor& a = value(av);
    if (c.size() != a.size()) throw Error(ErrorCode::ShapeMismatch, "mul_const: size mismatch");
    Tensor out(a.shape);
    for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = a.data[i] * c[i];
    Node n;
    n.value = std::move(out);
    n.requires_grad = needs(av);
    const int self = static_cast<int>(nodes_.size());
    n.backward = [=](Graph& g) {
        const std::vector<double>& go = g.nodes_[static_cast<std::size_t>(self)].grad;
        std::vector<double>& ga = g.grad_of(av);
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * c[i];
    };
    return push(std::move(n));
}

Var Graph::sum(Var av) {
    const Tensor& a = value(av);
    double s = 0.0;
    for (double v : a.data) s += v;
    Node n;
    n.value = Tensor({}, std::vector<double>{s});
    n.requires_grad = needs(av);
    const int self = static_cast<int>(nodes_.size());
    n.backward = [=](Graph& g) {
        const double go = g.nodes_[static_cast<std::size_t>(self)].grad[0];
        std::vector<double>& ga = g.grad_of(av);
        for (double& v : ga) v += go;
    };
    return push(std::move(n));
}

Var Graph::mse(Var av, Var bv) {
    const Tensor& a = value(av);
    const Tensor& b = value(bv);
    require_same_size(a, b, "mse");
    if (a.size() == 0) throw Error(ErrorCode::ShapeMismatch, "mse: empty operands");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        s += d * d;
    }
    const double count = static_cast<double>(a.size());
    Node n;
    n.value = Tensor({}, std::vector<double>{s / count});
    n.requires_grad = needs(av) || needs(bv);
    const int self = static_cast<int>(nodes_.size());
    n.backward = [=](Graph& g) {
        const double go = g.nodes_[static_cast<std::size_t>(self)].grad[0];
        const Tensor& aa = g.value(av);
        const Tensor& bb = g.value(bv);
        const bool na = g.needs(av), nb = g.needs(bv);
        std::vector<double>* ga = na ? &g.grad_of(av) : nullptr;
        std::vector<double>* gb = nb ? &g.grad_of(bv) : nullptr;
        for (std::size_t i = 0; i < aa.size(); ++i) {
            const double d = 2.0 * go * (aa.data[i] - bb.data[i]) / count;
            if (na) (*ga)[i] += d;
            if (nb) (*gb)[i] -= d;
        }
    };
    return push(std::move(n));
}

Var Graph::masked_mse(Var av, Var bv) {
    const Tensor& a = value(av);
    const Tensor& b = value(bv);
    require_same_size(a, b, "masked_mse");
    const std::vector<std::uint8_t>& ma = node(av).mask;
    const std::vector<std::uint8_t>& mb = node(bv).mask;
    std::vector<std::uint8_t> joint(a.size(), 1);
    for (std::size_t i = 0; i < a.size(); ++i) {
        if ((!ma.empty() && !ma[i]) || (!mb.empty() && !mb[i])) joint[i] = 0;
    }
    double s = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!joint[i]) continue;
        const double d = a.data[i] - b.data[i];
        s += d * d;
        ++count;
    }
    if (count == 0) throw Error(ErrorCode::EmptyOverlap, "masked_mse: no jointly valid pixels");
    const double cnt = static_cast<double>(count);
    Node n;
    n.value = Tensor({}, std::vector<double>{s / cnt});
    n.requires_grad = needs(av) || needs(bv);
    const int self = static_cast<int>(nodes_.size());
    n.backward = [=](Graph& g) {
        const double go = g.nodes_[static_cast<std::size_t>(self)].grad[0];
        const Tensor& aa = g.value(av);
        const Tensor& bb = g.value(bv);
        const bool na = g.needs(av), nb = g.needs(bv);
        std::vector<double>* ga = na ? &g.grad_of(av) : nullptr;
        std::vector<double>* gb = nb ? &g.grad_of(bv) : nullptr;
        for (std::size_t i = 0; i < aa.size(); ++i) {
            if (!joint[i]) continue;
            const double d = 2.0 * go * (aa.data[i] - bb.data[i]) / cnt;
            if (na) (*ga)[i] += d;
            if (nb) (*gb)[i] -= d;
        }
    };
    return push(std::move(n));
}

Var Graph::compose_params(Var av, Var bv) {
    const Tensor& a = value(av);
    const Tensor& b = value(bv);
    if (a.size() != 3 || b.size() != 3) throw Error(ErrorCode::ShapeMismatch, "compose_params: expected 3-vectors");
    // M(p) x = R(x - c + d) + c, so M(b) M(a) has theta_a + theta_b and
    // d = d_a + R(theta_a)^T d_b.
    const double cs = std::cos(a.data[0]);
    const double sn = std::sin(a.data[0]);
    Tensor out({3});
    out.data[0] = a.data[0] + b.data[0];
    out.data[1] = a.data[1] + cs * b.data[1] - sn * b.data[2];
    out.data[2] = a.data[2] + sn * b.data[1] + cs * b.data[2];
    Node n;
    n.value = std::move(out);
    n.requires_grad = needs(av) || needs(bv);
    const int self = static_cast<int>(nodes_.size());
    n.backward = [=](Graph& g) {
        const std::vector<double>& go = g.nodes_[static_cast<std::size_t>(self)].grad;
        const Tensor& bb = g.value(bv);
        if (g.needs(av)) {
            std::vector<double>& ga = g.grad_of(av);
            ga[0] += go[0] + go[1] * (-sn * bb.data[1] - cs * bb.data[2]) + go[2] * (cs * bb.data[1] - sn * bb.data[2]);
            ga[1] += go[1];
            ga[2] += go[2];
        }
        if (g.needs(bv)) {
            std::vector<double>& gb = g.grad_of(bv);
            gb[0] += go[0];
            gb[1] += cs * go[1] + sn * go[2];
            gb[2] += -sn * go[1] + cs * go[2];
        }
    };
    return push(std::move(n));
}

Var Graph::warp(Var image, Var params, const RotationCenter& center) {
    return warp_impl(image, params, center, nullptr);
}

Var Graph::warp_fixed(Var image, const AffineMatrix& m) { return warp_impl(image, Var{}, {}, &m); }

Var Graph::warp_impl(Var iv, Var pv, const RotationCenter& center, const AffineMatrix* fixed) {
    const Tensor& img = value(iv);
    if (img.shape.size() != 2) throw Error(ErrorCode::ShapeMismatch, "warp: expected a [H,W] image");
    const int H = img.shape[0];
    const int W = img.shape[1];
    const std::size_t N = img.size();

    // Source coordinate of every output pixel: x = R^T (y - c) + c - d.
    std::vector<double> sx(N), sy(N);
    double cs = 1.0, sn = 0.0;
    if (fixed != nullptr) {
        const AffineMatrix inv = inverse(*fixed);
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                const Point2 s = inv.apply({static_cast<double>(x), static_cast<double>(y)});
                sx[static_cast<std::size_t>(y) * W + x] = s.x;
                sy[static_cast<std::size_t>(y) * W + x] = s.y;
            }
        }
    } else {
        const Tensor& p = value(pv);
        if (p.size() != 3) throw Error(ErrorCode::ShapeMismatch, "warp: params must be a 3-vector");
        cs = std::cos(p.data[0]);
        sn = std::sin(p.data[0]);
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                const double ux = x - center.rx;
                const double uy = y - center.ry;
                sx[static_cast<std::size_t>(y) * W + x] = cs * ux - sn * uy + center.rx - p.data[1];
                sy[static_cast<std::size_t>(y) * W + x] = sn * ux + cs * uy + center.ry - p.data[2];
            }
        }
    }

    const std::vector<std::uint8_t>& in_mask = node(iv).mask;
    auto tap = [&](int x, int y) -> double {
        if (x < 0 || y < 0 || x >= W || y >= H) return 0.0;
        return img.data[static_cast<std::size_t>(y) * W + x];
    };
    auto tap_ok = [&](int x, int y) {
        if (x < 0 || y < 0 || x >= W || y >= H) return false;
        return in_mask.empty() || in_mask[static_cast<std::size_t>(y) * W + x] != 0;
    };

    Tensor out({H, W});
    std::vector<std::uint8_t> mask(N, 1);
    const double* src = img.data.data();
    for (std::size_t i = 0; i < N; ++i) {
        const double fx0 = std::floor(sx[i]);
        const double fy0 = std::floor(sy[i]);
        if (fx0 < -2.0 || fy0 < -2.0 || fx0 > W + 1 || fy0 > H + 1) {
            out.data[i] = 0.0;
            mask[i] = 0;
            continue;
        }
        const int x0 = static_cast<int>(fx0);
        const int y0 = static_cast<int>(fy0);
        const double fx = sx[i] - fx0;
        const double fy = sy[i] - fy0;
        const double w00 = (1 - fx) * (1 - fy), w10 = fx * (1 - fy), w01 = (1 - fx) * fy, w11 = fx * fy;
        if (x0 >= 0 && y0 >= 0 && x0 + 1 < W && y0 + 1 < H) {
            // all four taps inside: index directly
            const std::size_t k = static_cast<std::size_t>(y0) * W + x0;
            out.data[i] = w00 * src[k] + w10 * src[k + 1] + w01 * src[k + W] + w11 * src[k + W + 1];
            if (!in_mask.empty()) {
                const bool ok = (w00 <= 0 || in_mask[k] != 0) && (w10 <= 0 || in_mask[k + 1] != 0) &&
                                (w01 <= 0 || in_mask[k + W] != 0) && (w11 <= 0 || in_mask[k + W + 1] != 0);
                mask[i] = ok ? 1 : 0;
            }
            continue;
        }
        out.data[i] = w00 * tap(x0, y0) + w10 * tap(x0 + 1, y0) + w01 * tap(x0, y0 + 1) + w11 * tap(x0 + 1, y0 + 1);
        const bool ok = (w00 <= 0 || tap_ok(x0, y0)) && (w10 <= 0 || tap_ok(x0 + 1, y0)) &&
                        (w01 <= 0 || tap_ok(x0, y0 + 1)) && (w11 <= 0 || tap_ok(x0 + 1, y0 + 1));
        mask[i] = ok ? 1 : 0;
    }

    Node n;
    n.value = std::move(out);
    n.mask = std::move(mask);
    const bool has_params = fixed == nullptr;
    n.requires_grad = needs(iv) || (has_params && needs(pv));
    const int self = static_cast<int>(nodes_.size());
    const RotationCenter c = center;
    n.backward = [=, sx = std::move(sx), sy = std::move(sy)](Graph& g) {
        const std::vector<double>& go = g.nodes_[static_cast<std::size_t>(self)].grad;
        const Tensor& im = g.value(iv);
        const bool need_img = g.needs(iv);
        const bool need_p = has_params && g.needs(pv);
        std::vector<double>* gi = need_img ? &g.grad_of(iv) : nullptr;
        auto at = [&](int x, int y) -> double {
            if (x < 0 || y < 0 || x >= W || y >= H) return 0.0;
            return im.data[static_cast<std::size_t>(y) * W + x];
        };
        auto scatter = [&](int x, int y, double v) {
            if (x < 0 || y < 0 || x >= W || y >= H) return;
            (*gi)[static_cast<std::size_t>(y) * W + x] += v;
        };
        double gth = 0.0, gdx = 0.0, gdy = 0.0;
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                const std::size_t i = static_cast<std::size_t>(y) * W + x;
                const double g0 = go[i];
                if (g0 == 0.0) continue;
                const double fx0 = std::floor(sx[i]);
                const double fy0 = std::floor(sy[i]);
                if (fx0 < -2.0 || fy0 < -2.0 || fx0 > W + 1 || fy0 > H + 1) continue;
                const int x0 = static_cast<int>(fx0);
                const int y0 = static_cast<int>(fy0);
                const double fx = sx[i] - fx0;
                const double fy = sy[i] - fy0;
                if (x0 >= 0 && y0 >= 0 && x0 + 1 < W && y0 + 1 < H) {
                    const std::size_t k = static_cast<std::size_t>(y0) * W + x0;
                    if (need_img) {
                        double* gk = gi->data();
                        gk[k] += g0 * (1 - fx) * (1 - fy);
                        gk[k + 1] += g0 * fx * (1 - fy);
                        gk[k + W] += g0 * (1 - fx) * fy;
                        gk[k + W + 1] += g0 * fx * fy;
                    }
                    if (need_p) {
                        const double* d = im.data.data();
                        const double i00 = d[k], i10 = d[k + 1], i01 = d[k + W], i11 = d[k + W + 1];
                        const double dsx = (1 - fy) * (i10 - i00) + fy * (i11 - i01);
                        const double dsy = (1 - fx) * (i01 - i00) + fx * (i11 - i10);
                        const double ux = x - c.rx;
                        const double uy = y - c.ry;
                        gth += g0 * (dsx * (-sn * ux - cs * uy) + dsy * (cs * ux - sn * uy));
                        gdx -= g0 * dsx;
                        gdy -= g0 * dsy;
                    }
                    continue;
                }
                if (need_img) {
                    scatter(x0, y0, g0 * (1 - fx) * (1 - fy));
                    scatter(x0 + 1, y0, g0 * fx * (1 - fy));
                    scatter(x0, y0 + 1, g0 * (1 - fx) * fy);
                    scatter(x0 + 1, y0 + 1, g0 * fx * fy);
                }
                if (need_p) {
                    const double i00 = at(x0, y0), i10 = at(x0 + 1, y0);
                    const double i01 = at(x0, y0 + 1), i11 = at(x0 + 1, y0 + 1);
                    const double dsx = (1 - fy) * (i10 - i00) + fy * (i11 - i01);
                    const double dsy = (1 - fx) * (i01 - i00) + fx * (i11 - i10);
                    const double ux = x - c.rx;
                    const double uy = y - c.ry;
                    gth += g0 * (dsx * (-sn * ux - cs * uy) + dsy * (cs * ux - sn * uy));
                    gdx -= g0 * dsx;
                    gdy -= g0 * dsy;
                }
            }
        }
        if (need_p) {
            std::vector<double>& gp = g.grad_of(pv);
            gp[0] += gth;
            gp[1] += gdx;
            gp[2] += gdy;
        }
    };
    return push(std::move(n));
}

void Graph::backward(Var loss) {
    Node& root = node(loss);
    if (root.value.size() != 1) {
        throw Error(ErrorCode::GraphNotRecorded, "backward: loss must be a scalar node");
    }
    for (Node& n : nodes_) n.grad.clear();
    grad_of(loss)[0] = 1.0;
    for (int id = loss.id; id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.requires_grad || n.grad.empty()) continue;
        if (n.backward) n.backward(*this);
        if (n.param != nullptr) {
            Tensor& p = *n.param;
            if (p.grad.size() != p.data.size()) p.grad.assign(p.data.size(), 0.0);
            const std::vector<double>& g = nodes_[static_cast<std::size_t>(id)].grad;
            for (std::size_t i = 0; i < g.size(); ++i) p.grad[i] += g[i];
        }
    }
}

}  // namespace vstab
