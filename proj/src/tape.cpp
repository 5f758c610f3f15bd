#include "coms2t/tape.hpp"

#include <cmath>

namespace coms2t::ad {

Tape::Var Tape::push(NDArray value, std::function<void()> back) {
    Node n;
    n.grad = NDArray(value.shape());
    n.value = std::move(value);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<Var>(nodes_.size()) - 1;
}

Tape::Var Tape::input(NDArray v) { return push(std::move(v)); }

Tape::Var Tape::param(const NDArray& value, NDArray* grad_sink) {
    if (grad_sink && !grad_sink->same_shape(value))
        throw ShapeError("param: grad sink shape mismatch");
    Var id = push(value);
    if (grad_sink) {
        nodes_[id].back = [this, id, grad_sink] {
            const NDArray& gr = nodes_[id].grad;
            for (std::size_t i = 0; i < gr.size(); ++i) (*grad_sink)[i] += gr[i];
        };
    }
    return id;
}

Tape::Var Tape::add(Var a, Var b) {
    const NDArray &va = val(a), &vb = val(b);
    if (!va.same_shape(vb)) throw ShapeError("add: shape mismatch");
    NDArray out(va.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] + vb[i];
    Var id = push(std::move(out), {});
    nodes_[id].back = [this, id, a, b] {
        const NDArray& gr = nodes_[id].grad;
        for (std::size_t i = 0; i < gr.size(); ++i) {
            g(a)[i] += gr[i];
            g(b)[i] += gr[i];
        }
    };
    return id;
}

Tape::Var Tape::sub(Var a, Var b) {
    const NDArray &va = val(a), &vb = val(b);
    if (!va.same_shape(vb)) throw ShapeError("sub: shape mismatch");
    NDArray out(va.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] - vb[i];
    Var id = push(std::move(out));
    nodes_[id].back = [this, id, a, b] {
        const NDArray& gr = nodes_[id].grad;
        for (std::size_t i = 0; i < gr.size(); ++i) {
            g(a)[i] += gr[i];
            g(b)[i] -= gr[i];
        }
    };
    return id;
}

Tape::Var Tape::mul(Var a, Var b) {
    const NDArray &va = val(a), &vb = val(b);
    if (!va.same_shape(vb)) throw ShapeError("mul: shape mismatch");
    NDArray out(va.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] * vb[i];
    Var id = push(std::move(out));
    nodes_[id].back = [this, id, a, b] {
        const NDArray& gr = nodes_[id].grad;
        const NDArray &va2 = val(a), &vb2 = val(b);
        for (std::size_t i = 0; i < gr.size(); ++i) {
            g(a)[i] += gr[i] * vb2[i];
            g(b)[i] += gr[i] * va2[i];
        }
    };
    return id;
}

Tape::Var Tape::scale(Var a, double c) {
    const NDArray& va = val(a);
    NDArray out(va.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] * c;
    Var id = push(std::move(out));
    nodes_[id].back = [this, id, a, c] {
        const NDArray& gr = nodes_[id].grad;
        for (std::size_t i = 0; i < gr.size(); ++i) g(a)[i] += gr[i] * c;
    };
    return id;
}

Tape::Var Tape::relu(Var a) {
    const NDArray& va = val(a);
    NDArray out(va.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] > 0.0 ? va[i] : 0.0;
    Var id = push(std::move(out));
    nodes_[id].back = [this, id, a] {
        const NDArray& gr = nodes_[id].grad;
        const NDArray& va2 = val(a);
        for (std::size_t i = 0; i < gr.size(); ++i)
            if (va2[i] > 0.0) g(a)[i] += gr[i];
    };
    return id;
}

Tape::Var Tape::softplus(Var a) {
    const NDArray& va = val(a);
    NDArray out(va.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        double x = va[i];
        // log1p(exp(x)) with overflow guard
        out[i] = x > 30.0 ? x : std::log1p(std::exp(x));
    }
    Var id = push(std::move(out));
    nodes_[id].back = [this, id, a] {
        const NDArray& gr = nodes_[id].grad;
        const NDArray& va2 = val(a);
        for (std::size_t i = 0; i < gr.size(); ++i) {
            double s = 1.0 / (1.0 + std::exp(-va2[i]));
            g(a)[i] += gr[i] * s;
        }
    };
    return id;
}

Tape::Var Tape::square(Var a) {
    const NDArray& va = val(a);
    NDArray out(va.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] * va[i];
    Var id = push(std::move(out));
    nodes_[id].back = [this, id, a] {
        const NDArray& gr = nodes_[id].grad;
        const NDArray& va2 = val(a);
        for (std::size_t i = 0; i < gr.size(); ++i) g(a)[i] += 2.0 * va2[i] * gr[i];
    };
    return id;
}

Tape::Var Tape::sum(Var a) {
    const NDArray& va = val(a);
    double s = 0.0;
    for (std::size_t i = 0; i < va.size(); ++i) s += va[i];
    Var id = push(NDArray::scalar(s));
    nodes_[id].back = [this, id, a] {
        double gr = nodes_[id].grad[0];
        for (std::size_t i = 0; i < g(a).size(); ++i) g(a)[i] += gr;
    };
    return id;
}

Tape::Var Tape::mae(Var pred, const NDArray& target) {
    const NDArray& vp = val(pred);
    if (!vp.same_shape(target)) throw ShapeError("mae: shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < vp.size(); ++i) s += std::fabs(vp[i] - target[i]);
    double n = static_cast<double>(vp.size());
    Var id = push(NDArray::scalar(s / n));
    NDArray t = target;
    nodes_[id].back = [this, id, pred, t = std::move(t), n] {
        double gr = nodes_[id].grad[0] / n;
        const NDArray& vp2 = val(pred);
        for (std::size_t i = 0; i < vp2.size(); ++i) {
            double d = vp2[i] - t[i];
            if (d > 0.0) g(pred)[i] += gr;
            else if (d < 0.0) g(pred)[i] -= gr;
            // d == 0: subgradient 0
        }
    };
    return id;
}

Tape::Var Tape::sse(Var pred, const NDArray& target) {
    const NDArray& vp = val(pred);
    if (!vp.same_shape(target)) throw ShapeError("sse: shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < vp.size(); ++i) {
        double d = vp[i] - target[i];
        s += d * d;
    }
    Var id = push(NDArray::scalar(s));
    NDArray t = target;
    nodes_[id].back = [this, id, pred, t = std::move(t)] {
        double gr = nodes_[id].grad[0];
        const NDArray& vp2 = val(pred);
        for (std::size_t i = 0; i < vp2.size(); ++i)
            g(pred)[i] += 2.0 * (vp2[i] - t[i]) * gr;
    };
    return id;
}

Tape::Var Tape::matmul(Var a, Var b) {
    const NDArray &va = val(a), &vb = val(b);
    if (va.rank() != 2 || vb.rank() != 2 || va.dim(1) != vb.dim(0))
        throw ShapeError("matmul: incompatible shapes");
    std::size_t M = va.dim(0), K = va.dim(1), N = vb.dim(1);
    NDArray out({M, N});
    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t k = 0; k < K; ++k) {
            double x = va.at(i, k);
            for (std::size_t j = 0; j < N; ++j) out.at(i, j) += x * vb.at(k, j);
        }
    Var id = push(std::move(out));
    nodes_[id].back = [this, id, a, b, M, K, N] {
        const NDArray& gr = nodes_[id].grad;
        const NDArray &va2 = val(a), &vb2 = val(b);
        for (std::size_t i = 0; i < M; ++i)
            for (std::size_t j = 0; j < N; ++j) {
                double gij = gr.at(i, j);
                for (std::size_t k = 0; k < K; ++k) {
                    g(a).at(i, k) += gij * vb2.at(k, j);
                    g(b).at(k, j) += gij * va2.at(i, k);
                }
            }
    };
    return id;
}

Tape::Var Tape::linear(Var x, Var w, Var b) {
    Var y = matmul(x, w);
    const NDArray& vb = val(b);
    const NDArray& vy = val(y);
    if (vb.rank() != 1 || vb.dim(0) != vy.dim(1)) throw ShapeError("linear: bias shape mismatch");
    std::size_t M = vy.dim(0), N = vy.dim(1);
    NDArray out({M, N});
    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < N; ++j) out.at(i, j) = vy.at(i, j) + vb[j];
    Var id = push(std::move(out));
    nodes_[id].back = [this, id, y, b, M, N] {
        const NDArray& gr = nodes_[id].grad;
        for (std::size_t i = 0; i < M; ++i)
            for (std::size_t j = 0; j < N; ++j) {
                g(y).at(i, j) += gr.at(i, j);
                g(b)[j] += gr.at(i, j);
            }
    };
    return id;
}

Tape::Var Tape::row_softmax(Var a) {
    const NDArray& va = val(a);
    if (va.rank() != 2) throw ShapeError("row_softmax: expects a matrix");
    std::size_t R = va.dim(0), C = va.dim(1);
    NDArray out({R, C});
    for (std::size_t r = 0; r < R; ++r) {
        double mx = va.at(r, 0);
        for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, va.at(r, c));
        double z = 0.0;
        for (std::size_t c = 0; c < C; ++c) z += std::exp(va.at(r, c) - mx);
        for (std::size_t c = 0; c < C; ++c) out.at(r, c) = std::exp(va.at(r, c) - mx) / z;
    }
    Var id = push(std::move(out));
    nodes_[id].back = [this, id, a, R, C] {
        const NDArray& gr = nodes_[id].grad;
        const NDArray& s = val(id);
        for (std::size_t r = 0; r < R; ++r) {
            double dot = 0.0;
            for (std::size_t c = 0; c < C; ++c) dot += gr.at(r, c) * s.at(r, c);
            for (std::size_t c = 0; c < C; ++c)
                g(a).at(r, c) += s.at(r, c) * (gr.at(r, c) - dot);
        }
    };
    return id;
}

Tape::Var Tape::node_mix(Var x, Var ahat) {
    const NDArray &vx = val(x), &va = val(ahat);
    if (vx.rank() != 4) throw ShapeError("node_mix: X must be [B,T,N,C]");
    std::size_t B = vx.dim(0), T = vx.dim(1), N = vx.dim(2), C = vx.dim(3);
    if (va.rank() != 2 || va.dim(0) != N || va.dim(1) != N)
        throw ShapeError("node_mix: adjacency must be NxN");
    NDArray out({B, T, N, C});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t m = 0; m < N; ++m) {
                    double w = va.at(n, m);
                    if (w == 0.0) continue;
                    for (std::size_t c = 0; c < C; ++c)
                        out.at(b, t, n, c) += w * vx.at(b, t, m, c);
                }
    Var id = push(std::move(out));
    nodes_[id].back = [this, id, x, ahat, B, T, N, C] {
        const NDArray& gr = nodes_[id].grad;
        const NDArray &vx2 = val(x), &va2 = val(ahat);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t t = 0; t < T; ++t)
                for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t m = 0; m < N; ++m) {
                        double w = va2.at(n, m);
                        double acc = 0.0;
                        for (std::size_t c = 0; c < C; ++c) {
                            double go = gr.at(b, t, n, c);
                            g(x).at(b, t, m, c) += w * go;
                            acc += go * vx2.at(b, t, m, c);
                        }
                        g(ahat).at(n, m) += acc;
                    }
    };
    return id;
}

Tape::Var Tape::feat_mix(Var x, Var w) {
    const NDArray &vx = val(x), &vw = val(w);
    if (vx.rank() != 4) throw ShapeError("feat_mix: X must be [B,T,N,C]");
    std::size_t B = vx.dim(0), T = vx.dim(1), N = vx.dim(2), Ci = vx.dim(3);
    if (vw.rank() != 2 || vw.dim(0) != Ci) throw ShapeError("feat_mix: weight shape mismatch");
    std::size_t Co = vw.dim(1);
    NDArray out({B, T, N, Co});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t ci = 0; ci < Ci; ++ci) {
                    double xv = vx.at(b, t, n, ci);
                    for (std::size_t co = 0; co < Co; ++co)
                        out.at(b, t, n, co) += xv * vw.at(ci, co);
                }
    Var id = push(std::move(out));
    nodes_[id].back = [this, id, x, w, B, T, N, Ci, Co] {
        const NDArray& gr = nodes_[id].grad;
        const NDArray &vx2 = val(x), &vw2 = val(w);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t t = 0; t < T; ++t)
                for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t ci = 0; ci < Ci; ++ci) {
                        double xv = vx2.at(b, t, n, ci);
                        double acc = 0.0;
                        for (std::size_t co = 0; co < Co; ++co) {
                            double go = gr.at(b, t, n, co);
                            acc += go * vw2.at(ci, co);
                            g(w).at(ci, co) += go * xv;
                        }
                        g(x).at(b, t, n, ci) += acc;
                    }
    };
    return id;
}

Tape::Var Tape::bias_last(Var x, Var b) {
    const NDArray &vx = val(x), &vb = val(b);
    if (vb.rank() != 1 || vb.dim(0) != vx.shape().back())
        throw ShapeError("bias_last: bias shape mismatch");
    std::size_t C = vb.dim(0);
    NDArray out(vx.shape());
    for (std::size_t i = 0; i < vx.size(); ++i) out[i] = vx[i] + vb[i % C];
    Var id = push(std::move(out));
    nodes_[id].back = [this, id, x, b, C] {
        const NDArray& gr = nodes_[id].grad;
        for (std::size_t i = 0; i < gr.size(); ++i) {
            g(x)[i] += gr[i];
            g(b)[i % C] += gr[i];
        }
    };
    return id;
}

Tape::Var Tape::causal_conv(Var x, Var k, int dilation) {
    const NDArray &vx = val(x), &vk = val(k);
    if (vx.rank() != 4) throw ShapeError("causal_conv: X must be [B,T,N,C]");
    if (vk.rank() != 3) throw ShapeError("causal_conv: kernel must be [kw,Cin,Cout]");
    std::size_t B = vx.dim(0), T = vx.dim(1), N = vx.dim(2), Ci = vx.dim(3);
    std::size_t KW = vk.dim(0), Co = vk.dim(2);
    if (vk.dim(1) != Ci) throw ShapeError("causal_conv: channel mismatch");
    if (dilation < 1) throw ConfigError("causal_conv: dilation must be >= 1");
    // Left zero padding keeps the length; taps before the window contribute 0
    // and are never read from any buffer.
    NDArray out({B, T, N, Co});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t kw = 0; kw < KW; ++kw) {
                    long src = static_cast<long>(t) -
                               static_cast<long>(KW - 1 - kw) * dilation;
                    if (src < 0) continue;
                    for (std::size_t ci = 0; ci < Ci; ++ci) {
                        double xv = vx.at(b, static_cast<std::size_t>(src), n, ci);
                        for (std::size_t co = 0; co < Co; ++co)
                            out.at(b, t, n, co) += xv * vk.at(kw, ci, co);
                    }
                }
    Var id = push(std::move(out));
    nodes_[id].back = [this, id, x, k, dilation, B, T, N, Ci, KW, Co] {
        const NDArray& gr = nodes_[id].grad;
        const NDArray &vx2 = val(x), &vk2 = val(k);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t t = 0; t < T; ++t)
                for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t kw = 0; kw < KW; ++kw) {
                        long src = static_cast<long>(t) -
                                   static_cast<long>(KW - 1 - kw) * dilation;
                        if (src < 0) continue;
                        auto s = static_cast<std::size_t>(src);
                        for (std::size_t ci = 0; ci < Ci; ++ci) {
                            double xv = vx2.at(b, s, n, ci);
                            double acc = 0.0;
                            for (std::size_t co = 0; co < Co; ++co) {
                                double go = gr.at(b, t, n, co);
                                acc += go * vk2.at(kw, ci, co);
                                g(k).at(kw, ci, co) += go * xv;
                            }
                            g(x).at(b, s, n, ci) += acc;
                        }
                    }
    };
    return id;
}

Tape::Var Tape::last_step(Var x) {
    const NDArray& vx = val(x);
    if (vx.rank() != 4) throw ShapeError("last_step: X must be [B,T,N,C]");
    std::size_t B = vx.dim(0), T = vx.dim(1), N = vx.dim(2), C = vx.dim(3);
    NDArray out({B, N, C});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t c = 0; c < C; ++c) out.at(b, n, c) = vx.at(b, T - 1, n, c);
    Var id = push(std::move(out));
    nodes_[id].back = [this, id, x, B, T, N, C] {
        const NDArray& gr = nodes_[id].grad;
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t c = 0; c < C; ++c)
                    g(x).at(b, T - 1, n, c) += gr.at(b, n, c);
    };
    return id;
}

Tape::Var Tape::expand_time(Var x) {
    const NDArray& vx = val(x);
    if (vx.rank() != 3) throw ShapeError("expand_time: expects [B,N,C]");
    NDArray out({vx.dim(0), 1, vx.dim(1), vx.dim(2)}, vx.raw());
    Var id = push(std::move(out));
    nodes_[id].back = [this, id, x] {
        const NDArray& gr = nodes_[id].grad;
        for (std::size_t i = 0; i < gr.size(); ++i) g(x)[i] += gr[i];
    };
    return id;
}

Tape::Var Tape::head_split(Var x, std::size_t horizon) {
    const NDArray& vx = val(x);
    if (vx.rank() != 4 || vx.dim(1) != 1 || vx.dim(3) % horizon != 0)
        throw ShapeError("head_split: expects [B,1,N,l*F]");
    std::size_t B = vx.dim(0), N = vx.dim(2), F = vx.dim(3) / horizon;
    NDArray out({B, horizon, N, F});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t l = 0; l < horizon; ++l)
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t f = 0; f < F; ++f)
                    out.at(b, l, n, f) = vx.at(b, 0, n, l * F + f);
    Var id = push(std::move(out));
    nodes_[id].back = [this, id, x, B, horizon, N, F] {
        const NDArray& gr = nodes_[id].grad;
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t l = 0; l < horizon; ++l)
                for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t f = 0; f < F; ++f)
                        g(x).at(b, 0, n, l * F + f) += gr.at(b, l, n, f);
    };
    return id;
}

Tape::Var Tape::add_node_broadcast(Var x, Var v) {
    const NDArray &vx = val(x), &vv = val(v);
    if (vx.rank() != 4) throw ShapeError("add_node_broadcast: X must be [B,T,N,C]");
    std::size_t B = vx.dim(0), T = vx.dim(1), N = vx.dim(2), C = vx.dim(3);
    if (vv.rank() != 2 || vv.dim(0) != N || vv.dim(1) != C)
        throw ShapeError("add_node_broadcast: V must be [N,C]");
    NDArray out(vx.shape());
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t c = 0; c < C; ++c)
                    out.at(b, t, n, c) = vx.at(b, t, n, c) + vv.at(n, c);
    Var id = push(std::move(out));
    nodes_[id].back = [this, id, x, v, B, T, N, C] {
        const NDArray& gr = nodes_[id].grad;
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t t = 0; t < T; ++t)
                for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t c = 0; c < C; ++c) {
                        g(x).at(b, t, n, c) += gr.at(b, t, n, c);
                        g(v).at(n, c) += gr.at(b, t, n, c);
                    }
    };
    return id;
}

Tape::Var Tape::add_step_broadcast(Var x, Var v) {
    const NDArray &vx = val(x), &vv = val(v);
    if (vx.rank() != 4) throw ShapeError("add_step_broadcast: X must be [B,T,N,C]");
    std::size_t B = vx.dim(0), T = vx.dim(1), N = vx.dim(2), C = vx.dim(3);
    if (vv.rank() != 2 || vv.dim(0) != T || vv.dim(1) != C)
        throw ShapeError("add_step_broadcast: V must be [T,C]");
    NDArray out(vx.shape());
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t c = 0; c < C; ++c)
                    out.at(b, t, n, c) = vx.at(b, t, n, c) + vv.at(t, c);
    Var id = push(std::move(out));
    nodes_[id].back = [this, id, x, v, B, T, N, C] {
        const NDArray& gr = nodes_[id].grad;
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t t = 0; t < T; ++t)
                for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t c = 0; c < C; ++c) {
                        g(x).at(b, t, n, c) += gr.at(b, t, n, c);
                        g(v).at(t, c) += gr.at(b, t, n, c);
                    }
    };
    return id;
}

Tape::Var Tape::add_sample_step_broadcast(Var x, Var v) {
    const NDArray &vx = val(x), &vv = val(v);
    if (vx.rank() != 4) throw ShapeError("add_sample_step_broadcast: X must be [B,T,N,C]");
    std::size_t B = vx.dim(0), T = vx.dim(1), N = vx.dim(2), C = vx.dim(3);
    if (vv.rank() != 2 || vv.dim(0) != B * T || vv.dim(1) != C)
        throw ShapeError("add_sample_step_broadcast: V must be [B*T,C]");
    NDArray out(vx.shape());
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t c = 0; c < C; ++c)
                    out.at(b, t, n, c) = vx.at(b, t, n, c) + vv.at(b * T + t, c);
    Var id = push(std::move(out));
    nodes_[id].back = [this, id, x, v, B, T, N, C] {
        const NDArray& gr = nodes_[id].grad;
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t t = 0; t < T; ++t)
                for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t c = 0; c < C; ++c) {
                        g(x).at(b, t, n, c) += gr.at(b, t, n, c);
                        g(v).at(b * T + t, c) += gr.at(b, t, n, c);
                    }
    };
    return id;
}

Tape::Var Tape::gather_rows(Var m, std::vector<std::size_t> idx) {
    const NDArray& vm = val(m);
    if (vm.rank() != 2) throw ShapeError("gather_rows: expects a matrix");
    std::size_t C = vm.dim(1), R = idx.size();
    for (auto i : idx)
        if (i >= vm.dim(0)) throw ShapeError("gather_rows: index out of range");
    NDArray out({R, C});
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) out.at(r, c) = vm.at(idx[r], c);
    Var id = push(std::move(out));
    nodes_[id].back = [this, id, m, idx = std::move(idx), C] {
        const NDArray& gr = nodes_[id].grad;
        for (std::size_t r = 0; r < idx.size(); ++r)
            for (std::size_t c = 0; c < C; ++c) g(m).at(idx[r], c) += gr.at(r, c);
    };
    return id;
}

Tape::Var Tape::concat_cols(Var a, Var b) {
    const NDArray &va = val(a), &vb = val(b);
    if (va.rank() != 2 || vb.rank() != 2 || va.dim(0) != vb.dim(0))
        throw ShapeError("concat_cols: row count mismatch");
    std::size_t R = va.dim(0), Ca = va.dim(1), Cb = vb.dim(1);
    NDArray out({R, Ca + Cb});
    for (std::size_t r = 0; r < R; ++r) {
        for (std::size_t c = 0; c < Ca; ++c) out.at(r, c) = va.at(r, c);
        for (std::size_t c = 0; c < Cb; ++c) out.at(r, Ca + c) = vb.at(r, c);
    }
    Var id = push(std::move(out));
    nodes_[id].back = [this, id, a, b, R, Ca, Cb] {
        const NDArray& gr = nodes_[id].grad;
        for (std::size_t r = 0; r < R; ++r) {
            for (std::size_t c = 0; c < Ca; ++c) g(a).at(r, c) += gr.at(r, c);
            for (std::size_t c = 0; c < Cb; ++c) g(b).at(r, c) += gr.at(r, Ca + c);
        }
    };
    return id;
}

Tape::Var Tape::slice_cols(Var a, std::size_t begin, std::size_t end) {
    const NDArray& va = val(a);
    if (va.rank() != 2 || begin >= end || end > va.dim(1))
        throw ShapeError("slice_cols: bad range");
    std::size_t R = va.dim(0), C = end - begin;
    NDArray out({R, C});
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) out.at(r, c) = va.at(r, begin + c);
    Var id = push(std::move(out));
    nodes_[id].back = [this, id, a, begin, R, C] {
        const NDArray& gr = nodes_[id].grad;
        for (std::size_t r = 0; r < R; ++r)
            for (std::size_t c = 0; c < C; ++c) g(a).at(r, begin + c) += gr.at(r, c);
    };
    return id;
}

Tape::Var Tape::cin_pool(Var a, Var b, Var w) {
    const NDArray &va = val(a), &vb = val(b), &vw = val(w);
    if (va.rank() != 2 || !va.same_shape(vb)) throw ShapeError("cin_pool: field shape mismatch");
    if (vw.rank() != 3 || vw.dim(1) != 2 || vw.dim(2) != 2)
        throw ShapeError("cin_pool: weights must be [H,2,2]");
    std::size_t M = va.dim(0), E = va.dim(1), H = vw.dim(0);
    NDArray out({M, H});
    for (std::size_t m = 0; m < M; ++m)
        for (std::size_t e = 0; e < E; ++e) {
            double z0 = va.at(m, e), z1 = vb.at(m, e);
            double p00 = z0 * z0, p01 = z0 * z1, p11 = z1 * z1;
            for (std::size_t h = 0; h < H; ++h)
                out.at(m, h) += vw.at(h, 0, 0) * p00 +
                                (vw.at(h, 0, 1) + vw.at(h, 1, 0)) * p01 +
                                vw.at(h, 1, 1) * p11;
        }
    Var id = push(std::move(out));
    nodes_[id].back = [this, id, a, b, w, M, E, H] {
        const NDArray& gr = nodes_[id].grad;
        const NDArray &va2 = val(a), &vb2 = val(b), &vw2 = val(w);
        for (std::size_t m = 0; m < M; ++m)
            for (std::size_t e = 0; e < E; ++e) {
                double z0 = va2.at(m, e), z1 = vb2.at(m, e);
                double d0 = 0.0, d1 = 0.0;
                for (std::size_t h = 0; h < H; ++h) {
                    double go = gr.at(m, h);
                    double wsym = vw2.at(h, 0, 1) + vw2.at(h, 1, 0);
                    d0 += go * (2.0 * vw2.at(h, 0, 0) * z0 + wsym * z1);
                    d1 += go * (2.0 * vw2.at(h, 1, 1) * z1 + wsym * z0);
                    g(w).at(h, 0, 0) += go * z0 * z0;
                    g(w).at(h, 0, 1) += go * z0 * z1;
                    g(w).at(h, 1, 0) += go * z0 * z1;
                    g(w).at(h, 1, 1) += go * z1 * z1;
                }
                g(a).at(m, e) += d0;
                g(b).at(m, e) += d1;
            }
    };
    return id;
}

void Tape::backward(Var loss) {
    if (val(loss).size() != 1) throw ShapeError("backward: loss must be scalar");
    for (auto& n : nodes_) n.grad.fill(0.0);
    nodes_[loss].grad[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it)
        if (it->back) it->back();
}

}  // namespace coms2t::ad
