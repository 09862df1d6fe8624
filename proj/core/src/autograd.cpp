#include "refblend/autograd.hpp"

#include <cmath>

#include "refblend/numerics.hpp"

namespace refblend::ag {

namespace {

TensorPtr own(Tensor t) { return std::make_shared<Tensor>(std::move(t)); }

// gw(i,o) += sum_n x(n,i) * g(n,o)
void accum_tn(const Tensor& x, const Tensor& g, Tensor& gw) {
    int n = x.dim(0), in = x.dim(1), out = g.dim(1);
    for (int r = 0; r < n; ++r) {
        const double* xrow = x.data.data() + static_cast<size_t>(r) * in;
        const double* grow = g.data.data() + static_cast<size_t>(r) * out;
        for (int i = 0; i < in; ++i) {
            double xv = xrow[i];
            if (xv == 0.0) continue;
            double* gwrow = gw.data.data() + static_cast<size_t>(i) * out;
            for (int o = 0; o < out; ++o) gwrow[o] += xv * grow[o];
        }
    }
}

void axpy(Tensor& dst, const Tensor& src, double a = 1.0) {
    for (int64_t i = 0; i < src.numel(); ++i)
        dst.data[static_cast<size_t>(i)] += a * src.data[static_cast<size_t>(i)];
}

} // namespace

Val constant(Tensor t) { return Val{own(std::move(t)), -1}; }

Val leaf(Tape* tp, const Tensor& stored) {
    Val r{TensorPtr(TensorPtr(), &stored), -1};
    if (tp) r.node = tp->add_leaf(stored.shape);
    return r;
}

Val add(Tape* tp, const Val& a, const Val& b) {
    if (!a.v().same_shape(b.v())) throw UsageError("shape_mismatch", "add: shapes differ");
    Tensor out = a.v();
    axpy(out, b.v());
    Val r{own(std::move(out)), -1};
    if (tp && (a.node >= 0 || b.node >= 0)) {
        int an = a.node, bn = b.node;
        r.node = tp->add(r.t->shape, [an, bn](Tape& T, int self) {
            const Tensor& g = T.grad(self);
            if (an >= 0) axpy(T.grad(an), g);
            if (bn >= 0) axpy(T.grad(bn), g);
        });
    }
    return r;
}

Val add_channel_bias(Tape* tp, const Val& x, const Val& bias) {
    const Tensor& xv = x.v();
    const Tensor& bv = bias.v();
    if (xv.rank() != 3 || bv.rank() != 1 || bv.dim(0) != xv.dim(0))
        throw UsageError("shape_mismatch", "add_channel_bias: need (C,H,W) and (C)");
    int C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
    Tensor out = xv;
    for (int c = 0; c < C; ++c) {
        double b = bv(c);
        double* plane = out.data.data() + static_cast<size_t>(c) * H * W;
        for (int i = 0; i < H * W; ++i) plane[i] += b;
    }
    Val r{own(std::move(out)), -1};
    if (tp && (x.node >= 0 || bias.node >= 0)) {
        int xn = x.node, bn = bias.node;
        r.node = tp->add(r.t->shape, [xn, bn, C, H, W](Tape& T, int self) {
            const Tensor& g = T.grad(self);
            if (xn >= 0) axpy(T.grad(xn), g);
            if (bn >= 0) {
                Tensor& gb = T.grad(bn);
                for (int c = 0; c < C; ++c) {
                    const double* plane = g.data.data() + static_cast<size_t>(c) * H * W;
                    double acc = 0.0;
                    for (int i = 0; i < H * W; ++i) acc += plane[i];
                    gb(c) += acc;
                }
            }
        });
    }
    return r;
}

Val scale(Tape* tp, const Val& x, double c) {
    Tensor out = x.v();
    for (double& v : out.data) v *= c;
    Val r{own(std::move(out)), -1};
    if (tp && x.node >= 0) {
        int xn = x.node;
        r.node = tp->add(r.t->shape, [xn, c](Tape& T, int self) {
            axpy(T.grad(xn), T.grad(self), c);
        });
    }
    return r;
}

Val silu(Tape* tp, const Val& x) {
    TensorPtr xp = x.t;
    Tensor out(xp->shape);
    for (int64_t i = 0; i < xp->numel(); ++i) {
        double v = xp->data[static_cast<size_t>(i)];
        out.data[static_cast<size_t>(i)] = v / (1.0 + std::exp(-v));
    }
    Val r{own(std::move(out)), -1};
    if (tp && x.node >= 0) {
        int xn = x.node;
        r.node = tp->add(r.t->shape, [xn, xp](Tape& T, int self) {
            const Tensor& g = T.grad(self);
            Tensor& gx = T.grad(xn);
            for (int64_t i = 0; i < xp->numel(); ++i) {
                double v = xp->data[static_cast<size_t>(i)];
                double s = 1.0 / (1.0 + std::exp(-v));
                gx.data[static_cast<size_t>(i)] += g.data[static_cast<size_t>(i)] * s * (1.0 + v * (1.0 - s));
            }
        });
    }
    return r;
}

Val linear(Tape* tp, const Val& x, const Val& w) {
    TensorPtr xp = x.t, wp = w.t;
    Val r{own(refblend::matmul(*xp, *wp)), -1};
    if (tp && (x.node >= 0 || w.node >= 0)) {
        int xn = x.node, wn = w.node;
        r.node = tp->add(r.t->shape, [xn, wn, xp, wp](Tape& T, int self) {
            const Tensor& g = T.grad(self);
            if (xn >= 0) axpy(T.grad(xn), refblend::matmul_nt(g, *wp));
            if (wn >= 0) accum_tn(*xp, g, T.grad(wn));
        });
    }
    return r;
}

Val linear_bias(Tape* tp, const Val& x, const Val& w, const Val& b) {
    Val y = linear(tp, x, w);
    const Tensor& bv = b.v();
    int n = y.v().dim(0), out = y.v().dim(1);
    if (bv.rank() != 1 || bv.dim(0) != out)
        throw UsageError("shape_mismatch", "linear_bias: bias length mismatch");
    Tensor o = y.v();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < out; ++j) o(i, j) += bv(j);
    Val r{own(std::move(o)), -1};
    if (tp && (y.node >= 0 || b.node >= 0)) {
        int yn = y.node, bn = b.node;
        r.node = tp->add(r.t->shape, [yn, bn, n, out](Tape& T, int self) {
            const Tensor& g = T.grad(self);
            if (yn >= 0) axpy(T.grad(yn), g);
            if (bn >= 0) {
                Tensor& gb = T.grad(bn);
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < out; ++j) gb(j) += g(i, j);
            }
        });
    }
    return r;
}

Val matmul(Tape* tp, const Val& a, const Val& b) {
    TensorPtr ap = a.t, bp = b.t;
    Val r{own(refblend::matmul(*ap, *bp)), -1};
    if (tp && (a.node >= 0 || b.node >= 0)) {
        int an = a.node, bn = b.node;
        r.node = tp->add(r.t->shape, [an, bn, ap, bp](Tape& T, int self) {
            const Tensor& g = T.grad(self);
            if (an >= 0) axpy(T.grad(an), refblend::matmul_nt(g, *bp));
            if (bn >= 0) accum_tn(*ap, g, T.grad(bn));
        });
    }
    return r;
}

Val matmul_nt(Tape* tp, const Val& a, const Val& b) {
    TensorPtr ap = a.t, bp = b.t;
    Val r{own(refblend::matmul_nt(*ap, *bp)), -1};
    if (tp && (a.node >= 0 || b.node >= 0)) {
        int an = a.node, bn = b.node;
        r.node = tp->add(r.t->shape, [an, bn, ap, bp](Tape& T, int self) {
            const Tensor& g = T.grad(self); // (n,m), a:(n,k), b:(m,k)
            if (an >= 0) axpy(T.grad(an), refblend::matmul(g, *bp));
            if (bn >= 0) {
                // gb(j,:) += sum_i g(i,j) * a(i,:)
                Tensor& gb = T.grad(bn);
                int n = ap->dim(0), k = ap->dim(1), m = bp->dim(0);
                for (int i = 0; i < n; ++i) {
                    const double* arow = ap->data.data() + static_cast<size_t>(i) * k;
                    const double* grow = g.data.data() + static_cast<size_t>(i) * m;
                    for (int j = 0; j < m; ++j) {
                        double gv = grow[j];
                        if (gv == 0.0) continue;
                        double* gbrow = gb.data.data() + static_cast<size_t>(j) * k;
                        for (int p = 0; p < k; ++p) gbrow[p] += gv * arow[p];
                    }
                }
            }
        });
    }
    return r;
}

Val softmax_rows(Tape* tp, const Val& x) {
    Val r{own(refblend::softmax(x.v(), 1)), -1};
    if (tp && x.node >= 0) {
        int xn = x.node;
        TensorPtr sp = r.t;
        r.node = tp->add(r.t->shape, [xn, sp](Tape& T, int self) {
            const Tensor& g = T.grad(self);
            Tensor& gx = T.grad(xn);
            int n = sp->dim(0), m = sp->dim(1);
            for (int i = 0; i < n; ++i) {
                const double* srow = sp->data.data() + static_cast<size_t>(i) * m;
                const double* grow = g.data.data() + static_cast<size_t>(i) * m;
                double* gxrow = gx.data.data() + static_cast<size_t>(i) * m;
                double dot = 0.0;
                for (int j = 0; j < m; ++j) dot += srow[j] * grow[j];
                for (int j = 0; j < m; ++j) gxrow[j] += srow[j] * (grow[j] - dot);
            }
        });
    }
    return r;
}

namespace {

void conv3x3_forward(const Tensor& x, const Tensor& w, const Tensor& b, Tensor& out) {
    int Cin = x.dim(0), H = x.dim(1), W = x.dim(2);
    int Cout = w.dim(0);
    for (int co = 0; co < Cout; ++co) {
        double* oplane = out.data.data() + static_cast<size_t>(co) * H * W;
        double bias = b(co);
        for (int i = 0; i < H * W; ++i) oplane[i] = bias;
        for (int ci = 0; ci < Cin; ++ci) {
            const double* xplane = x.data.data() + static_cast<size_t>(ci) * H * W;
            for (int ky = 0; ky < 3; ++ky) {
                int oy = ky - 1;
                for (int kx = 0; kx < 3; ++kx) {
                    int ox = kx - 1;
                    double wv = w(co, ci, ky, kx);
                    int y_lo = std::max(0, -oy), y_hi = std::min(H, H - oy);
                    int x_lo = std::max(0, -ox), x_hi = std::min(W, W - ox);
                    for (int y = y_lo; y < y_hi; ++y) {
                        double* orow = oplane + static_cast<size_t>(y) * W;
                        const double* xrow = xplane + static_cast<size_t>(y + oy) * W + ox;
                        for (int xx = x_lo; xx < x_hi; ++xx) orow[xx] += wv * xrow[xx];
                    }
                }
            }
        }
    }
}

} // namespace

Val conv3x3(Tape* tp, const Val& x, const Val& w, const Val& b) {
    TensorPtr xp = x.t, wp = w.t;
    const Tensor& xv = *xp;
    const Tensor& wv = *wp;
    if (xv.rank() != 3 || wv.rank() != 4 || wv.dim(1) != xv.dim(0) || wv.dim(2) != 3 || wv.dim(3) != 3)
        throw UsageError("shape_mismatch", "conv3x3: need x(Cin,H,W), w(Cout,Cin,3,3)");
    int H = xv.dim(1), W = xv.dim(2), Cout = wv.dim(0);
    Tensor out({Cout, H, W});
    conv3x3_forward(xv, wv, b.v(), out);
    Val r{own(std::move(out)), -1};
    if (tp && (x.node >= 0 || w.node >= 0 || b.node >= 0)) {
        int xn = x.node, wn = w.node, bn = b.node;
        r.node = tp->add(r.t->shape, [xn, wn, bn, xp, wp, H, W](Tape& T, int self) {
            const Tensor& g = T.grad(self);
            int Cin = xp->dim(0), Cout = wp->dim(0);
            if (bn >= 0) {
                Tensor& gb = T.grad(bn);
                for (int co = 0; co < Cout; ++co) {
                    const double* gplane = g.data.data() + static_cast<size_t>(co) * H * W;
                    double acc = 0.0;
                    for (int i = 0; i < H * W; ++i) acc += gplane[i];
                    gb(co) += acc;
                }
            }
            for (int co = 0; co < Cout; ++co) {
                const double* gplane = g.data.data() + static_cast<size_t>(co) * H * W;
                for (int ci = 0; ci < Cin; ++ci) {
                    const double* xplane = xp->data.data() + static_cast<size_t>(ci) * H * W;
                    double* gxplane = xn >= 0 ? T.grad(xn).data.data() + static_cast<size_t>(ci) * H * W : nullptr;
                    for (int ky = 0; ky < 3; ++ky) {
                        int oy = ky - 1;
                        for (int kx = 0; kx < 3; ++kx) {
                            int ox = kx - 1;
                            int y_lo = std::max(0, -oy), y_hi = std::min(H, H - oy);
                            int x_lo = std::max(0, -ox), x_hi = std::min(W, W - ox);
                            if (wn >= 0) {
                                double acc = 0.0;
                                for (int y = y_lo; y < y_hi; ++y) {
                                    const double* grow = gplane + static_cast<size_t>(y) * W;
                                    const double* xrow = xplane + static_cast<size_t>(y + oy) * W + ox;
                                    for (int xx = x_lo; xx < x_hi; ++xx) acc += grow[xx] * xrow[xx];
                                }
                                T.grad(wn)(co, ci, ky, kx) += acc;
                            }
                            if (xn >= 0) {
                                double wval = (*wp)(co, ci, ky, kx);
                                for (int y = y_lo; y < y_hi; ++y) {
                                    const double* grow = gplane + static_cast<size_t>(y) * W;
                                    double* gxrow = gxplane + static_cast<size_t>(y + oy) * W + ox;
                                    for (int xx = x_lo; xx < x_hi; ++xx) gxrow[xx] += wval * grow[xx];
                                }
                            }
                        }
                    }
                }
            }
        });
    }
    return r;
}

Val conv1x1(Tape* tp, const Val& x, const Val& w, const Val& b) {
    TensorPtr xp = x.t, wp = w.t;
    const Tensor& xv = *xp;
    const Tensor& wv = *wp;
    if (xv.rank() != 3 || wv.rank() != 2 || wv.dim(1) != xv.dim(0))
        throw UsageError("shape_mismatch", "conv1x1: need x(Cin,H,W), w(Cout,Cin)");
    int Cin = xv.dim(0), H = xv.dim(1), W = xv.dim(2), Cout = wv.dim(0);
    Tensor out({Cout, H, W});
    for (int co = 0; co < Cout; ++co) {
        double* oplane = out.data.data() + static_cast<size_t>(co) * H * W;
        double bias = b.v()(co);
        for (int i = 0; i < H * W; ++i) oplane[i] = bias;
        for (int ci = 0; ci < Cin; ++ci) {
            double wval = wv(co, ci);
            const double* xplane = xv.data.data() + static_cast<size_t>(ci) * H * W;
            for (int i = 0; i < H * W; ++i) oplane[i] += wval * xplane[i];
        }
    }
    Val r{own(std::move(out)), -1};
    if (tp && (x.node >= 0 || w.node >= 0 || b.node >= 0)) {
        int xn = x.node, wn = w.node, bn = b.node;
        r.node = tp->add(r.t->shape, [xn, wn, bn, xp, wp, H, W](Tape& T, int self) {
            const Tensor& g = T.grad(self);
            int Cin = xp->dim(0), Cout = wp->dim(0);
            for (int co = 0; co < Cout; ++co) {
                const double* gplane = g.data.data() + static_cast<size_t>(co) * H * W;
                if (bn >= 0) {
                    double acc = 0.0;
                    for (int i = 0; i < H * W; ++i) acc += gplane[i];
                    T.grad(bn)(co) += acc;
                }
                for (int ci = 0; ci < Cin; ++ci) {
                    const double* xplane = xp->data.data() + static_cast<size_t>(ci) * H * W;
                    if (wn >= 0) {
                        double acc = 0.0;
                        for (int i = 0; i < H * W; ++i) acc += gplane[i] * xplane[i];
                        T.grad(wn)(co, ci) += acc;
                    }
                    if (xn >= 0) {
                        double wval = (*wp)(co, ci);
                        double* gxplane = T.grad(xn).data.data() + static_cast<size_t>(ci) * H * W;
                        for (int i = 0; i < H * W; ++i) gxplane[i] += wval * gplane[i];
                    }
                }
            }
        });
    }
    return r;
}

Val avgpool2(Tape* tp, const Val& x) {
    const Tensor& xv = x.v();
    if (xv.rank() != 3 || xv.dim(1) % 2 != 0 || xv.dim(2) % 2 != 0)
        throw UsageError("shape_mismatch", "avgpool2: need (C,H,W) with even H,W");
    int C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
    Tensor out({C, H / 2, W / 2});
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H / 2; ++y)
            for (int xx = 0; xx < W / 2; ++xx)
                out(c, y, xx) = 0.25 * (xv(c, 2 * y, 2 * xx) + xv(c, 2 * y, 2 * xx + 1) +
                                        xv(c, 2 * y + 1, 2 * xx) + xv(c, 2 * y + 1, 2 * xx + 1));
    Val r{own(std::move(out)), -1};
    if (tp && x.node >= 0) {
        int xn = x.node;
        r.node = tp->add(r.t->shape, [xn, C, H, W](Tape& T, int self) {
            const Tensor& g = T.grad(self);
            Tensor& gx = T.grad(xn);
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < H / 2; ++y)
                    for (int xx = 0; xx < W / 2; ++xx) {
                        double gv = 0.25 * g(c, y, xx);
                        gx(c, 2 * y, 2 * xx) += gv;
                        gx(c, 2 * y, 2 * xx + 1) += gv;
                        gx(c, 2 * y + 1, 2 * xx) += gv;
                        gx(c, 2 * y + 1, 2 * xx + 1) += gv;
                    }
        });
    }
    return r;
}

Val upsample_nearest2(Tape* tp, const Val& x) {
    const Tensor& xv = x.v();
    if (xv.rank() != 3) throw UsageError("shape_mismatch", "upsample_nearest2: need (C,H,W)");
    int C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
    Tensor out({C, H * 2, W * 2});
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < 2 * H; ++y)
            for (int xx = 0; xx < 2 * W; ++xx) out(c, y, xx) = xv(c, y / 2, xx / 2);
    Val r{own(std::move(out)), -1};
    if (tp && x.node >= 0) {
        int xn = x.node;
        r.node = tp->add(r.t->shape, [xn, C, H, W](Tape& T, int self) {
            const Tensor& g = T.grad(self);
            Tensor& gx = T.grad(xn);
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < 2 * H; ++y)
                    for (int xx = 0; xx < 2 * W; ++xx) gx(c, y / 2, xx / 2) += g(c, y, xx);
        });
    }
    return r;
}

Val group_norm(Tape* tp, const Val& x, const Val& gamma, const Val& beta, int groups) {
    constexpr double kEps = 1e-5;
    const Tensor& xv = x.v();
    if (xv.rank() != 3) throw UsageError("shape_mismatch", "group_norm: need (C,H,W)");
    int C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
    if (groups < 1 || C % groups != 0)
        throw UsageError("shape_mismatch", "group_norm: groups must divide channels");
    int cg = C / groups;
    int64_t m = static_cast<int64_t>(cg) * H * W;

    auto xhat = std::make_shared<Tensor>(xv.shape);
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(groups));
    Tensor out(xv.shape);
    for (int gidx = 0; gidx < groups; ++gidx) {
        const double* xg = xv.data.data() + static_cast<size_t>(gidx) * cg * H * W;
        double mean = 0.0;
        for (int64_t i = 0; i < m; ++i) mean += xg[i];
        mean /= static_cast<double>(m);
        double var = 0.0;
        for (int64_t i = 0; i < m; ++i) {
            double d = xg[i] - mean;
            var += d * d;
        }
        var /= static_cast<double>(m);
        double istd = 1.0 / std::sqrt(var + kEps);
        (*inv_std)[static_cast<size_t>(gidx)] = istd;
        double* xh = xhat->data.data() + static_cast<size_t>(gidx) * cg * H * W;
        for (int64_t i = 0; i < m; ++i) xh[i] = (xg[i] - mean) * istd;
    }
    for (int c = 0; c < C; ++c) {
        double ga = gamma.v()(c), be = beta.v()(c);
        const double* xh = xhat->data.data() + static_cast<size_t>(c) * H * W;
        double* o = out.data.data() + static_cast<size_t>(c) * H * W;
        for (int i = 0; i < H * W; ++i) o[i] = ga * xh[i] + be;
    }
    Val r{own(std::move(out)), -1};
    if (tp && (x.node >= 0 || gamma.node >= 0 || beta.node >= 0)) {
        int xn = x.node, gn = gamma.node, bn = beta.node;
        TensorPtr gammap = gamma.t;
        r.node = tp->add(r.t->shape, [xn, gn, bn, xhat, inv_std, gammap, C, H, W, groups, cg, m](Tape& T, int self) {
            const Tensor& g = T.grad(self);
            if (bn >= 0) {
                Tensor& gb = T.grad(bn);
                for (int c = 0; c < C; ++c) {
                    const double* grow = g.data.data() + static_cast<size_t>(c) * H * W;
                    double acc = 0.0;
                    for (int i = 0; i < H * W; ++i) acc += grow[i];
                    gb(c) += acc;
                }
            }
            if (gn >= 0) {
                Tensor& gg = T.grad(gn);
                for (int c = 0; c < C; ++c) {
                    const double* grow = g.data.data() + static_cast<size_t>(c) * H * W;
                    const double* xh = xhat->data.data() + static_cast<size_t>(c) * H * W;
                    double acc = 0.0;
                    for (int i = 0; i < H * W; ++i) acc += grow[i] * xh[i];
                    gg(c) += acc;
                }
            }
            if (xn >= 0) {
                Tensor& gx = T.grad(xn);
                for (int gidx = 0; gidx < groups; ++gidx) {
                    // dxhat = g * gamma (per channel within the group)
                    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                    for (int cc = 0; cc < cg; ++cc) {
                        int c = gidx * cg + cc;
                        double ga = (*gammap)(c);
                        const double* grow = g.data.data() + static_cast<size_t>(c) * H * W;
                        const double* xh = xhat->data.data() + static_cast<size_t>(c) * H * W;
                        for (int i = 0; i < H * W; ++i) {
                            double dxh = grow[i] * ga;
                            sum_dxhat += dxh;
                            sum_dxhat_xhat += dxh * xh[i];
                        }
                    }
                    double mean_dxhat = sum_dxhat / static_cast<double>(m);
                    double mean_dxhat_xhat = sum_dxhat_xhat / static_cast<double>(m);
                    double istd = (*inv_std)[static_cast<size_t>(gidx)];
                    for (int cc = 0; cc < cg; ++cc) {
                        int c = gidx * cg + cc;
                        double ga = (*gammap)(c);
                        const double* grow = g.data.data() + static_cast<size_t>(c) * H * W;
                        const double* xh = xhat->data.data() + static_cast<size_t>(c) * H * W;
                        double* gxrow = gx.data.data() + static_cast<size_t>(c) * H * W;
                        for (int i = 0; i < H * W; ++i) {
                            double dxh = grow[i] * ga;
                            gxrow[i] += istd * (dxh - mean_dxhat - xh[i] * mean_dxhat_xhat);
                        }
                    }
                }
            }
        });
    }
    return r;
}

Val embed_rows(Tape* tp, const Val& table, const std::vector<int>& ids) {
    const Tensor& tv = table.v();
    if (tv.rank() != 2) throw UsageError("shape_mismatch", "embed_rows: table must be (V,E)");
    int V = tv.dim(0), E = tv.dim(1);
    for (int id : ids)
        if (id < 0 || id >= V) throw UsageError("token_range", "token id out of vocabulary");
    int K = static_cast<int>(ids.size());
    Tensor out({K, E});
    for (int k = 0; k < K; ++k)
        for (int e = 0; e < E; ++e) out(k, e) = tv(ids[static_cast<size_t>(k)], e);
    Val r{own(std::move(out)), -1};
    if (tp && table.node >= 0) {
        int tn = table.node;
        std::vector<int> ids_copy = ids;
        r.node = tp->add(r.t->shape, [tn, ids_copy, E](Tape& T, int self) {
            const Tensor& g = T.grad(self);
            Tensor& gt = T.grad(tn);
            for (size_t k = 0; k < ids_copy.size(); ++k)
                for (int e = 0; e < E; ++e) gt(ids_copy[k], e) += g(static_cast<int>(k), e);
        });
    }
    return r;
}

Val rows_from_chw(Tape* tp, const Val& x) {
    const Tensor& xv = x.v();
    if (xv.rank() != 3) throw UsageError("shape_mismatch", "rows_from_chw: need (C,H,W)");
    int C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
    Tensor out({H * W, C});
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int xx = 0; xx < W; ++xx) out(y * W + xx, c) = xv(c, y, xx);
    Val r{own(std::move(out)), -1};
    if (tp && x.node >= 0) {
        int xn = x.node;
        r.node = tp->add(r.t->shape, [xn, C, H, W](Tape& T, int self) {
            const Tensor& g = T.grad(self);
            Tensor& gx = T.grad(xn);
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < H; ++y)
                    for (int xx = 0; xx < W; ++xx) gx(c, y, xx) += g(y * W + xx, c);
        });
    }
    return r;
}

Val chw_from_rows(Tape* tp, const Val& x, int h, int w) {
    const Tensor& xv = x.v();
    if (xv.rank() != 2 || xv.dim(0) != h * w)
        throw UsageError("shape_mismatch", "chw_from_rows: rows must equal h*w");
    int C = xv.dim(1);
    Tensor out({C, h, w});
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) out(c, y, xx) = xv(y * w + xx, c);
    Val r{own(std::move(out)), -1};
    if (tp && x.node >= 0) {
        int xn = x.node;
        r.node = tp->add(r.t->shape, [xn, C, h, w](Tape& T, int self) {
            const Tensor& g = T.grad(self);
            Tensor& gx = T.grad(xn);
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < h; ++y)
                    for (int xx = 0; xx < w; ++xx) gx(y * w + xx, c) += g(c, y, xx);
        });
    }
    return r;
}

Val reshape(Tape* tp, const Val& x, std::vector<int> shape) {
    Val r{own(x.v().reshaped(shape)), -1};
    if (tp && x.node >= 0) {
        int xn = x.node;
        r.node = tp->add(r.t->shape, [xn](Tape& T, int self) {
            const Tensor& g = T.grad(self);
            Tensor& gx = T.grad(xn);
            for (int64_t i = 0; i < g.numel(); ++i)
                gx.data[static_cast<size_t>(i)] += g.data[static_cast<size_t>(i)];
        });
    }
    return r;
}

Val mse(Tape* tp, const Val& pred, const Tensor& target) {
    TensorPtr pp = pred.t;
    if (!pp->same_shape(target)) throw UsageError("shape_mismatch", "mse: shapes differ");
    auto tgt = std::make_shared<Tensor>(target);
    double acc = 0.0;
    for (int64_t i = 0; i < pp->numel(); ++i) {
        double d = pp->data[static_cast<size_t>(i)] - tgt->data[static_cast<size_t>(i)];
        acc += d * d;
    }
    Tensor out({1});
    out(0) = acc / static_cast<double>(pp->numel());
    Val r{own(std::move(out)), -1};
    if (tp && pred.node >= 0) {
        int pn = pred.node;
        r.node = tp->add(r.t->shape, [pn, pp, tgt](Tape& T, int self) {
            double gout = T.grad(self)(0);
            Tensor& gp = T.grad(pn);
            double k = 2.0 / static_cast<double>(pp->numel());
            for (int64_t i = 0; i < pp->numel(); ++i)
                gp.data[static_cast<size_t>(i)] +=
                    gout * k * (pp->data[static_cast<size_t>(i)] - tgt->data[static_cast<size_t>(i)]);
        });
    }
    return r;
}

} // namespace refblend::ag
