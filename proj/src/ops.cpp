#include "cpmt/ops.hpp"

#include <cmath>
#include <numeric>

#include "cpmt/errors.hpp"
#include "cpmt/kernels.hpp"

namespace cpmt {

namespace {

void require_rank2(const Tensor& t, const char* op) {
    if (t.rank() != 2)
        throw DimensionError(std::string(op) + " expects a rank-2 tensor, got " + shape_str(t.shape()));
}

std::span<double> grad_span(double* p, std::size_t n) { return {p, n}; }

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
        throw DimensionError("matmul shape mismatch: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<double> out(m * n);
    kernels::gemm_nn(a.data(), b.data(), out, m, k, n, false);
    return Tensor::from_op({m, n}, std::move(out), {a, b}, [a, b, m, k, n](auto g, auto pg) {
        if (pg[0]) kernels::gemm_nt(g, b.data(), grad_span(pg[0], m * k), m, n, k, true);
        if (pg[1]) kernels::gemm_tn(a.data(), g, grad_span(pg[1], k * n), k, m, n, true);
    });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols())
        throw DimensionError("matmul_nt shape mismatch: " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()) + "^T");
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    std::vector<double> out(m * n);
    kernels::gemm_nt(a.data(), b.data(), out, m, k, n, false);
    return Tensor::from_op({m, n}, std::move(out), {a, b}, [a, b, m, k, n](auto g, auto pg) {
        if (pg[0]) kernels::gemm_nn(g, b.data(), grad_span(pg[0], m * k), m, n, k, true);
        if (pg[1]) kernels::gemm_tn(g, a.data(), grad_span(pg[1], n * k), n, m, k, true);
    });
}

Tensor transpose(const Tensor& a) {
    require_rank2(a, "transpose");
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<double> out(m * n);
    auto src = a.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = src[i * n + j];
    return Tensor::from_op({n, m}, std::move(out), {a}, [m, n](auto g, auto pg) {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) pg[0][i * n + j] += g[j * m + i];
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() == b.shape()) {
        std::vector<double> out(a.data().begin(), a.data().end());
        auto bv = b.data();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
        return Tensor::from_op(a.shape(), std::move(out), {a, b}, [](auto g, auto pg) {
            for (int p = 0; p < 2; ++p)
                if (pg[p])
                    for (std::size_t i = 0; i < g.size(); ++i) pg[p][i] += g[i];
        });
    }
    if (a.rank() == 2 && b.rank() == 1 && a.cols() == b.dim(0)) {
        const std::size_t m = a.rows(), n = a.cols();
        std::vector<double> out(a.data().begin(), a.data().end());
        auto bv = b.data();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bv[j];
        return Tensor::from_op(a.shape(), std::move(out), {a, b}, [m, n](auto g, auto pg) {
            if (pg[0])
                for (std::size_t i = 0; i < m * n; ++i) pg[0][i] += g[i];
            if (pg[1])
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) pg[1][j] += g[i * n + j];
        });
    }
    throw DimensionError("add shape mismatch: " + shape_str(a.shape()) + " + " + shape_str(b.shape()));
}

Tensor sub(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw DimensionError("sub shape mismatch: " + shape_str(a.shape()) + " - " + shape_str(b.shape()));
    std::vector<double> out(a.data().begin(), a.data().end());
    auto bv = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    return Tensor::from_op(a.shape(), std::move(out), {a, b}, [](auto g, auto pg) {
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (pg[0]) pg[0][i] += g[i];
            if (pg[1]) pg[1][i] -= g[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw DimensionError("mul shape mismatch: " + shape_str(a.shape()) + " * " + shape_str(b.shape()));
    std::vector<double> out(a.numel());
    auto av = a.data(), bv = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    return Tensor::from_op(a.shape(), std::move(out), {a, b}, [a, b](auto g, auto pg) {
        auto av = a.data(), bv = b.data();
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (pg[0]) pg[0][i] += g[i] * bv[i];
            if (pg[1]) pg[1][i] += g[i] * av[i];
        }
    });
}

Tensor scale(const Tensor& a, double s) {
    std::vector<double> out(a.data().begin(), a.data().end());
    for (auto& v : out) v *= s;
    return Tensor::from_op(a.shape(), std::move(out), {a}, [s](auto g, auto pg) {
        for (std::size_t i = 0; i < g.size(); ++i) pg[0][i] += s * g[i];
    });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
    if (axis >= x.rank())
        throw DimensionError("softmax axis " + std::to_string(axis) + " out of range for " + shape_str(x.shape()));
    const auto& shape = x.shape();
    const std::size_t len = shape[axis];
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];

    std::vector<double> y(x.numel());
    if (inner == 1) {
        kernels::softmax_rows(x.data(), y, outer, len);
    } else {
        auto xv = x.data();
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t in = 0; in < inner; ++in) {
                const std::size_t base = o * len * inner + in;
                double mx = xv[base];
                for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, xv[base + j * inner]);
                double s = 0.0;
                for (std::size_t j = 0; j < len; ++j) {
                    y[base + j * inner] = std::exp(xv[base + j * inner] - mx);
                    s += y[base + j * inner];
                }
                for (std::size_t j = 0; j < len; ++j) y[base + j * inner] /= s;
            }
    }
    std::vector<double> saved = y;
    return Tensor::from_op(shape, std::move(y), {x},
                           [saved = std::move(saved), outer, inner, len](auto g, auto pg) {
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t in = 0; in < inner; ++in) {
                const std::size_t base = o * len * inner + in;
                double dot = 0.0;
                for (std::size_t j = 0; j < len; ++j) dot += g[base + j * inner] * saved[base + j * inner];
                for (std::size_t j = 0; j < len; ++j) {
                    const std::size_t idx = base + j * inner;
                    pg[0][idx] += saved[idx] * (g[idx] - dot);
                }
            }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    if (x.rank() == 1) return reshape(layer_norm(reshape(x, {1, x.dim(0)}), gain, bias, eps), {x.dim(0)});
    require_rank2(x, "layer_norm");
    const std::size_t t = x.rows(), d = x.cols();
    if (gain.shape() != Shape{d} || bias.shape() != Shape{d})
        throw DimensionError("layer_norm feature mismatch: x " + shape_str(x.shape()) + ", gain " +
                             shape_str(gain.shape()) + ", bias " + shape_str(bias.shape()));
    std::vector<double> xhat(t * d), inv_std(t), out(t * d);
    auto xv = x.data(), gv = gain.data(), bv = bias.data();
    for (std::size_t i = 0; i < t; ++i) {
        const double* row = xv.data() + i * d;
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= static_cast<double>(d);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
            xhat[i * d + j] = (row[j] - mean) * inv_std[i];
            out[i * d + j] = xhat[i * d + j] * gv[j] + bv[j];
        }
    }
    return Tensor::from_op(x.shape(), std::move(out), {x, gain, bias},
                           [gain, xhat = std::move(xhat), inv_std = std::move(inv_std), t, d](auto g, auto pg) {
        auto gv = gain.data();
        const double inv_d = 1.0 / static_cast<double>(d);
        for (std::size_t i = 0; i < t; ++i) {
            const double* gr = g.data() + i * d;
            const double* xh = xhat.data() + i * d;
            if (pg[1])
                for (std::size_t j = 0; j < d; ++j) pg[1][j] += gr[j] * xh[j];
            if (pg[2])
                for (std::size_t j = 0; j < d; ++j) pg[2][j] += gr[j];
            if (pg[0]) {
                double mean_dx = 0.0, mean_dx_xh = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    const double dxh = gr[j] * gv[j];
                    mean_dx += dxh;
                    mean_dx_xh += dxh * xh[j];
                }
                mean_dx *= inv_d;
                mean_dx_xh *= inv_d;
                for (std::size_t j = 0; j < d; ++j)
                    pg[0][i * d + j] += inv_std[i] * (gr[j] * gv[j] - mean_dx - xh[j] * mean_dx_xh);
            }
        }
    });
}

Tensor gelu(const Tensor& x) {
    constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double a = 0.044715;
    auto xv = x.data();
    std::vector<double> out(x.numel()), deriv(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = xv[i];
        const double th = std::tanh(c * (v + a * v * v * v));
        out[i] = 0.5 * v * (1.0 + th);
        deriv[i] = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * c * (1.0 + 3.0 * a * v * v);
    }
    return Tensor::from_op(x.shape(), std::move(out), {x}, [deriv = std::move(deriv)](auto g, auto pg) {
        for (std::size_t i = 0; i < g.size(); ++i) pg[0][i] += g[i] * deriv[i];
    });
}

Tensor relu(const Tensor& x) {
    auto xv = x.data();
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
    return Tensor::from_op(x.shape(), std::move(out), {x}, [x](auto g, auto pg) {
        auto xv = x.data();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (xv[i] > 0.0) pg[0][i] += g[i];
    });
}

Tensor dropout(const Tensor& x, double rate, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0) throw ParameterError("dropout rate must be in [0,1)");
    if (rate == 0.0) return x;
    const double keep = 1.0 / (1.0 - rate);
    std::vector<double> mask(x.numel()), out(x.numel());
    auto xv = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        mask[i] = rng.uniform() < rate ? 0.0 : keep;
        out[i] = xv[i] * mask[i];
    }
    return Tensor::from_op(x.shape(), std::move(out), {x}, [mask = std::move(mask)](auto g, auto pg) {
        for (std::size_t i = 0; i < g.size(); ++i) pg[0][i] += g[i] * mask[i];
    });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols of nothing");
    const bool vec = parts[0].rank() == 1;
    const std::size_t m = vec ? 1 : parts[0].rows();
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (vec ? p.rank() != 1 : (p.rank() != 2 || p.rows() != m))
            throw DimensionError("concat_cols mismatch: " + shape_str(parts[0].shape()) + " with " + shape_str(p.shape()));
        widths.push_back(vec ? p.dim(0) : p.cols());
        total += widths.back();
    }
    std::vector<double> out(m * total);
    std::size_t off = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        auto v = parts[p].data();
        for (std::size_t i = 0; i < m; ++i)
            std::copy_n(v.data() + i * widths[p], widths[p], out.data() + i * total + off);
        off += widths[p];
    }
    Shape shape = vec ? Shape{total} : Shape{m, total};
    return Tensor::from_op(std::move(shape), std::move(out), parts, [widths, m, total](auto g, auto pg) {
        std::size_t off = 0;
        for (std::size_t p = 0; p < widths.size(); ++p) {
            if (pg[p])
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < widths[p]; ++j) pg[p][i * widths[p] + j] += g[i * total + off + j];
            off += widths[p];
        }
    });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimensionError("concat_rows of nothing");
    const std::size_t d = parts[0].cols();
    std::size_t total = 0;
    std::vector<std::size_t> sizes;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.cols() != d)
            throw DimensionError("concat_rows mismatch: " + shape_str(parts[0].shape()) + " with " + shape_str(p.shape()));
        sizes.push_back(p.numel());
        total += p.rows();
    }
    std::vector<double> out;
    out.reserve(total * d);
    for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    return Tensor::from_op({total, d}, std::move(out), parts, [sizes](auto g, auto pg) {
        std::size_t off = 0;
        for (std::size_t p = 0; p < sizes.size(); ++p) {
            if (pg[p])
                for (std::size_t i = 0; i < sizes[p]; ++i) pg[p][i] += g[off + i];
            off += sizes[p];
        }
    });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
    require_rank2(x, "slice_rows");
    if (count == 0 || begin + count > x.rows())
        throw DimensionError("slice_rows [" + std::to_string(begin) + ", +" + std::to_string(count) +
                             ") out of range for " + shape_str(x.shape()));
    const std::size_t d = x.cols();
    std::vector<double> out(x.data().begin() + begin * d, x.data().begin() + (begin + count) * d);
    return Tensor::from_op({count, d}, std::move(out), {x}, [begin, d](auto g, auto pg) {
        for (std::size_t i = 0; i < g.size(); ++i) pg[0][begin * d + i] += g[i];
    });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count) {
    require_rank2(x, "slice_cols");
    if (count == 0 || begin + count > x.cols())
        throw DimensionError("slice_cols [" + std::to_string(begin) + ", +" + std::to_string(count) +
                             ") out of range for " + shape_str(x.shape()));
    const std::size_t m = x.rows(), n = x.cols();
    std::vector<double> out(m * count);
    auto xv = x.data();
    for (std::size_t i = 0; i < m; ++i) std::copy_n(xv.data() + i * n + begin, count, out.data() + i * count);
    return Tensor::from_op({m, count}, std::move(out), {x}, [begin, m, n, count](auto g, auto pg) {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < count; ++j) pg[0][i * n + begin + j] += g[i * count + j];
    });
}

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& rows) {
    require_rank2(x, "gather_rows");
    if (rows.empty()) throw DimensionError("gather_rows with no indices");
    const std::size_t d = x.cols();
    std::vector<double> out(rows.size() * d);
    auto xv = x.data();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= x.rows())
            throw DimensionError("gather_rows index " + std::to_string(rows[i]) + " out of range for " + shape_str(x.shape()));
        std::copy_n(xv.data() + rows[i] * d, d, out.data() + i * d);
    }
    return Tensor::from_op({rows.size(), d}, std::move(out), {x}, [rows, d](auto g, auto pg) {
        for (std::size_t i = 0; i < rows.size(); ++i)
            for (std::size_t j = 0; j < d; ++j) pg[0][rows[i] * d + j] += g[i * d + j];
    });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel())
        throw DimensionError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
    std::vector<double> out(x.data().begin(), x.data().end());
    return Tensor::from_op(std::move(shape), std::move(out), {x}, [](auto g, auto pg) {
        for (std::size_t i = 0; i < g.size(); ++i) pg[0][i] += g[i];
    });
}

Tensor mean_rows(const Tensor& x) {
    require_rank2(x, "mean_rows");
    const std::size_t m = x.rows(), d = x.cols();
    std::vector<double> out(d, 0.0);
    auto xv = x.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < d; ++j) out[j] += xv[i * d + j];
    const double inv = 1.0 / static_cast<double>(m);
    for (auto& v : out) v *= inv;
    return Tensor::from_op({d}, std::move(out), {x}, [m, d, inv](auto g, auto pg) {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < d; ++j) pg[0][i * d + j] += g[j] * inv;
    });
}

Tensor sum(const Tensor& x) {
    auto xv = x.data();
    const double s = std::accumulate(xv.begin(), xv.end(), 0.0);
    const std::size_t n = x.numel();
    return Tensor::from_op({1}, {s}, {x}, [n](auto g, auto pg) {
        for (std::size_t i = 0; i < n; ++i) pg[0][i] += g[0];
    });
}

Tensor row_normalize(const Tensor& x) {
    require_rank2(x, "row_normalize");
    const std::size_t m = x.rows(), d = x.cols();
    std::vector<double> out(m * d), norms(m);
    auto xv = x.data();
    for (std::size_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += xv[i * d + j] * xv[i * d + j];
        norms[i] = std::sqrt(s);
        if (!(norms[i] > 0.0)) throw NumericError("row_normalize: row " + std::to_string(i) + " has zero norm");
        for (std::size_t j = 0; j < d; ++j) out[i * d + j] = xv[i * d + j] / norms[i];
    }
    std::vector<double> y = out;
    return Tensor::from_op({m, d}, std::move(out), {x},
                           [y = std::move(y), norms = std::move(norms), m, d](auto g, auto pg) {
        for (std::size_t i = 0; i < m; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < d; ++j) dot += y[i * d + j] * g[i * d + j];
            for (std::size_t j = 0; j < d; ++j)
                pg[0][i * d + j] += (g[i * d + j] - y[i * d + j] * dot) / norms[i];
        }
    });
}

}  // namespace cpmt
