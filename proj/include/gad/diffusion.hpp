#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "gad/parallel.hpp"
#include "gad/raster.hpp"

// Perona-Malik anisotropic diffusion and its guided variant. The image is
// evolved by an explicit 4-neighbor scheme with one coefficient per
// undirected pixel edge,
//
//   out(p) = in(p) + lambda * sum_q c(p,q) * (in(q) - in(p)),
//
// where the coefficient c = 1 / (1 + (g/K)^2) is driven by the local
// contrast g of the image itself (classic mode) or of one or two separate
// guide images (guided mode, which transfers the guides' edges into the
// filtered image). Coefficients on edges crossing the image border are zero,
// so no mass enters or leaves the grid.

namespace gad {

struct GadParams {
    int iterations;
    double kappa;
    double lambda;
    bool freeze_guides;

    explicit GadParams(int iterations_, double kappa_ = 5.0, double lambda_ = 0.24,
                       bool freeze_guides_ = false)
        : iterations(iterations_), kappa(kappa_), lambda(lambda_),
          freeze_guides(freeze_guides_) {
        if (iterations < 0) {
            throw validation_error("GadParams: iterations must be >= 0");
        }
        if (!(kappa > 0.0) || !std::isfinite(kappa)) {
            throw validation_error("GadParams: kappa must be a positive finite value");
        }
        if (!(lambda > 0.0) || !(lambda <= 0.25)) {
            throw validation_error(
                "GadParams: lambda must be in (0, 0.25]; the explicit 4-neighbor "
                "scheme is unstable for lambda > 0.25 (got " +
                std::to_string(lambda) + ")");
        }
    }
};

/// Per-pixel, per-direction diffusion coefficients, stored as a 4-channel
/// raster in the order north, south, east, west. Symmetric by construction:
/// the coefficient of an edge is stored on both of its endpoints. Entries for
/// edges that would cross the image border are 0.
class EdgeCoefficients {
public:
    enum Dir { North = 0, South = 1, East = 2, West = 3 };

    EdgeCoefficients(int width, int height) : planes_(width, height, 4, 0.0) {}

    static EdgeCoefficients ones(int width, int height) {
        EdgeCoefficients c(width, height);
        RasterF& p = c.planes_;
        for (int r = 0; r < height; ++r) {
            for (int col = 0; col < width; ++col) {
                p.at(r, col, North) = (r > 0) ? 1.0 : 0.0;
                p.at(r, col, South) = (r < height - 1) ? 1.0 : 0.0;
                p.at(r, col, East) = (col < width - 1) ? 1.0 : 0.0;
                p.at(r, col, West) = (col > 0) ? 1.0 : 0.0;
            }
        }
        return c;
    }

    int width() const { return planes_.width(); }
    int height() const { return planes_.height(); }

    double at(int row, int col, Dir dir) const { return planes_.at(row, col, dir); }

    RasterF& raster() { return planes_; }
    const RasterF& raster() const { return planes_; }

    bool same_shape(const EdgeCoefficients& other) const {
        return width() == other.width() && height() == other.height();
    }

private:
    RasterF planes_;
};

/// Edge-stopping function 1 / (1 + (g/K)^2): 1 at zero gradient (full
/// diffusion), strictly decreasing, 0.5 at g = K.
inline double stopping_function(double gradient_magnitude, double kappa) {
    if (!(kappa > 0.0) || !std::isfinite(kappa)) {
        throw validation_error("stopping_function: kappa must be positive and finite");
    }
    if (!std::isfinite(gradient_magnitude)) {
        throw validation_error("stopping_function: gradient magnitude must be finite");
    }
    const double s = gradient_magnitude / kappa;
    return 1.0 / (1.0 + s * s);
}

namespace detail {

// Compact coefficient planes, one value per undirected edge: south[r][c] is
// the edge (r,c)-(r+1,c), east[r][c] the edge (r,c)-(r,c+1). The bottom row
// of `south` and the right column of `east` are always 0 (no neighbor, so no
// flux). The iteration drivers work on these directly; the 4-direction
// EdgeCoefficients raster is assembled from them only for the public API.
struct CoeffPlanes {
    std::vector<double> south;
    std::vector<double> east;
};

// Channel count as a template parameter so the per-channel loops unroll and
// the column loops vectorize.
template <int CH>
inline void coeff_rows(const double* g, int w, int h, double inv, double* south,
                       double* east, int r0, int r1) {
    for (int r = r0; r < r1; ++r) {
        const double* row = g + static_cast<std::size_t>(r) * w * CH;
        double* erow = east + static_cast<std::size_t>(r) * w;
        for (int c = 0; c + 1 < w; ++c) {
            double sum = 0.0;
            for (int k = 0; k < CH; ++k) {
                sum += std::abs(row[(c + 1) * CH + k] - row[c * CH + k]);
            }
            const double s = sum * inv;
            erow[c] = 1.0 / (1.0 + s * s);
        }
        erow[w - 1] = 0.0;
        double* srow = south + static_cast<std::size_t>(r) * w;
        if (r + 1 < h) {
            const double* below = row + static_cast<std::size_t>(w) * CH;
            for (int c = 0; c < w; ++c) {
                double sum = 0.0;
                for (int k = 0; k < CH; ++k) {
                    sum += std::abs(below[c * CH + k] - row[c * CH + k]);
                }
                const double s = sum * inv;
                srow[c] = 1.0 / (1.0 + s * s);
            }
        } else {
            std::fill(srow, srow + w, 0.0);
        }
    }
}

inline void coeff_planes_into(const RasterF& guide, double kappa, CoeffPlanes& out,
                              int threads) {
    const int w = guide.width(), h = guide.height(), ch = guide.channels();
    if (ch != 1 && ch != 3) {
        throw validation_error("edge_coefficients: guide must have 1 or 3 channels, got " +
                               std::to_string(ch));
    }
    const std::size_t n = static_cast<std::size_t>(w) * h;
    out.south.resize(n);
    out.east.resize(n);

    // The per-channel contrast sum is divided by (channels * K), so a single
    // channel uses K directly and three channels use the per-channel mean.
    const double inv = 1.0 / (ch * kappa);
    const double* g = guide.data();
    double* south = out.south.data();
    double* east = out.east.data();
    parallel_rows(h, threads, [&](int r0, int r1) {
        if (ch == 1) {
            coeff_rows<1>(g, w, h, inv, south, east, r0, r1);
        } else {
            coeff_rows<3>(g, w, h, inv, south, east, r0, r1);
        }
    });
}

inline void edge_coefficients_into(const RasterF& guide, double kappa,
                                   EdgeCoefficients& out, CoeffPlanes& scratch,
                                   int threads) {
    const int w = guide.width(), h = guide.height();
    coeff_planes_into(guide, kappa, scratch, threads);
    if (out.width() != w || out.height() != h) {
        out = EdgeCoefficients(w, h);
    }
    const double* south = scratch.south.data();
    const double* east = scratch.east.data();

    double* planes = out.raster().data();
    parallel_rows(h, threads, [&](int r0, int r1) {
        for (int r = r0; r < r1; ++r) {
            double* prow = planes + static_cast<std::size_t>(r) * w * 4;
            const double* srow = south + static_cast<std::size_t>(r) * w;
            const double* erow = east + static_cast<std::size_t>(r) * w;
            const double* sup = srow - w;  // valid only when r > 0
            for (int c = 0; c < w; ++c) {
                prow[c * 4 + EdgeCoefficients::North] = (r > 0) ? sup[c] : 0.0;
                prow[c * 4 + EdgeCoefficients::South] = srow[c];
                prow[c * 4 + EdgeCoefficients::East] = erow[c];
                prow[c * 4 + EdgeCoefficients::West] = (c > 0) ? erow[c - 1] : 0.0;
            }
        }
    });
}

inline void diffuse_step_into(const RasterF& in, const EdgeCoefficients& coeffs,
                              double lambda, RasterF& out, int threads) {
    const int w = in.width(), h = in.height(), ch = in.channels();
    const double* src = in.data();
    const double* planes = coeffs.raster().data();
    double* dst = out.data();
    const std::size_t row_stride = static_cast<std::size_t>(w) * ch;

    parallel_rows(h, threads, [&](int r0, int r1) {
        for (int r = r0; r < r1; ++r) {
            const double* row = src + static_cast<std::size_t>(r) * row_stride;
            const double* above = (r > 0) ? row - row_stride : row;
            const double* below = (r + 1 < h) ? row + row_stride : row;
            const double* crow = planes + static_cast<std::size_t>(r) * w * 4;
            double* orow = dst + static_cast<std::size_t>(r) * row_stride;
            for (int c = 0; c < w; ++c) {
                const double cn = crow[c * 4 + EdgeCoefficients::North];
                const double cs = crow[c * 4 + EdgeCoefficients::South];
                const double ce = crow[c * 4 + EdgeCoefficients::East];
                const double cw = crow[c * 4 + EdgeCoefficients::West];
                const int ce_col = (c + 1 < w) ? c + 1 : c;
                const int cw_col = (c > 0) ? c - 1 : c;
                for (int k = 0; k < ch; ++k) {
                    const double x = row[c * ch + k];
                    const double flux = cn * (above[c * ch + k] - x) +
                                        cs * (below[c * ch + k] - x) +
                                        ce * (row[ce_col * ch + k] - x) +
                                        cw * (row[cw_col * ch + k] - x);
                    orow[c * ch + k] = x + lambda * flux;
                }
            }
        }
    });
}

// One diffusion step straight from coefficient planes; the effective
// coefficient of each edge is the minimum over NG plane sets (NG = 1 or 2),
// so the guide combination never materializes an intermediate raster.
// CH <= 0 means the channel count is only known at run time.
template <int CH, int NG>
inline void diffuse_rows(const double* src, int w, int h, int runtime_ch,
                         const double* s0, const double* e0, const double* s1,
                         const double* e1, double lambda, double* dst, int r0,
                         int r1) {
    const int ch = (CH > 0) ? CH : runtime_ch;
    const std::size_t stride = static_cast<std::size_t>(w) * ch;
    for (int r = r0; r < r1; ++r) {
        const double* row = src + r * stride;
        const double* above = (r > 0) ? row - stride : row;
        const double* below = (r + 1 < h) ? row + stride : row;
        double* orow = dst + r * stride;
        const double* s0r = s0 + static_cast<std::size_t>(r) * w;
        const double* e0r = e0 + static_cast<std::size_t>(r) * w;
        const double* s1r = (NG == 2) ? s1 + static_cast<std::size_t>(r) * w : nullptr;
        const double* e1r = (NG == 2) ? e1 + static_cast<std::size_t>(r) * w : nullptr;
        for (int c = 0; c < w; ++c) {
            double cn = (r > 0) ? s0r[c - w] : 0.0;
            double cs = s0r[c];
            double ce = e0r[c];
            double cw = (c > 0) ? e0r[c - 1] : 0.0;
            if constexpr (NG == 2) {
                cn = std::min(cn, (r > 0) ? s1r[c - w] : 0.0);
                cs = std::min(cs, s1r[c]);
                ce = std::min(ce, e1r[c]);
                cw = std::min(cw, (c > 0) ? e1r[c - 1] : 0.0);
            }
            const std::size_t cc = static_cast<std::size_t>(c) * ch;
            const std::size_t eastc = (c + 1 < w) ? cc + ch : cc;
            const std::size_t westc = (c > 0) ? cc - ch : cc;
            for (int k = 0; k < ch; ++k) {
                const double x = row[cc + k];
                const double flux = cn * (above[cc + k] - x) +
                                    cs * (below[cc + k] - x) +
                                    ce * (row[eastc + k] - x) +
                                    cw * (row[westc + k] - x);
                orow[cc + k] = x + lambda * flux;
            }
        }
    }
}

template <int NG>
inline void diffuse_step_planes_ng(const RasterF& in, const CoeffPlanes* const* planes,
                                   double lambda, RasterF& out, int threads) {
    const int w = in.width(), h = in.height(), ch = in.channels();
    const double* src = in.data();
    double* dst = out.data();
    const double* s0 = planes[0]->south.data();
    const double* e0 = planes[0]->east.data();
    const double* s1 = (NG == 2) ? planes[1]->south.data() : nullptr;
    const double* e1 = (NG == 2) ? planes[1]->east.data() : nullptr;
    parallel_rows(h, threads, [&](int r0, int r1) {
        if (ch == 1) {
            diffuse_rows<1, NG>(src, w, h, ch, s0, e0, s1, e1, lambda, dst, r0, r1);
        } else if (ch == 3) {
            diffuse_rows<3, NG>(src, w, h, ch, s0, e0, s1, e1, lambda, dst, r0, r1);
        } else {
            diffuse_rows<0, NG>(src, w, h, ch, s0, e0, s1, e1, lambda, dst, r0, r1);
        }
    });
}

inline void diffuse_step_planes(const RasterF& in, const CoeffPlanes* const* planes,
                                int n_planes, double lambda, RasterF& out,
                                int threads) {
    if (n_planes == 1) {
        diffuse_step_planes_ng<1>(in, planes, lambda, out, threads);
    } else {
        diffuse_step_planes_ng<2>(in, planes, lambda, out, threads);
    }
}

inline void combine_min_into(const EdgeCoefficients& a, const EdgeCoefficients& b,
                             EdgeCoefficients& out) {
    const std::size_t n = a.raster().size();
    const double* pa = a.raster().data();
    const double* pb = b.raster().data();
    double* po = out.raster().data();
    for (std::size_t i = 0; i < n; ++i) {
        po[i] = std::min(pa[i], pb[i]);
    }
}

}  // namespace detail

/// Computes per-edge diffusion coefficients from a 1- or 3-channel guide.
/// For each 4-neighbor edge (p,q): c = 1 / (1 + (sum_ch |guide(q) - guide(p)|
/// / (channels * K))^2).
inline EdgeCoefficients edge_coefficients(const RasterF& guide, double kappa,
                                          int threads = 1) {
    if (!(kappa > 0.0) || !std::isfinite(kappa)) {
        throw validation_error("edge_coefficients: kappa must be positive and finite");
    }
    EdgeCoefficients out(guide.width(), guide.height());
    detail::CoeffPlanes scratch;
    detail::edge_coefficients_into(guide, kappa, out, scratch, threads);
    return out;
}

/// Element-wise minimum; restricts diffusion wherever either input does.
inline EdgeCoefficients combine_min(const EdgeCoefficients& a, const EdgeCoefficients& b) {
    if (!a.same_shape(b)) {
        throw validation_error("combine_min: dimension mismatch");
    }
    EdgeCoefficients out(a.width(), a.height());
    detail::combine_min_into(a, b, out);
    return out;
}

/// One explicit diffusion step, applied independently per channel. Requires
/// lambda in (0, 0.25] (the update is then a convex combination, so values
/// stay within the input's range and total mass is conserved up to rounding).
inline RasterF diffuse_step(const RasterF& image, const EdgeCoefficients& coeffs,
                            double lambda, int threads = 1) {
    if (image.width() != coeffs.width() || image.height() != coeffs.height()) {
        throw validation_error("diffuse_step: image/coefficient dimension mismatch");
    }
    if (!(lambda > 0.0) || !(lambda <= 0.25)) {
        throw validation_error("diffuse_step: lambda must be in (0, 0.25]");
    }
    RasterF out(image.width(), image.height(), image.channels());
    detail::diffuse_step_into(image, coeffs, lambda, out, threads);
    return out;
}

/// Classic self-guided anisotropic diffusion: each iteration recomputes the
/// coefficients from the current image, then takes one step.
inline RasterF perona_malik(const RasterF& image, const GadParams& params,
                            int threads = 1) {
    RasterF cur = image;
    RasterF next(image.width(), image.height(), image.channels());
    detail::CoeffPlanes planes;
    const detail::CoeffPlanes* planes_ptr[1] = {&planes};
    for (int i = 0; i < params.iterations; ++i) {
        detail::coeff_planes_into(cur, params.kappa, planes, threads);
        detail::diffuse_step_planes(cur, planes_ptr, 1, params.lambda, next, threads);
        std::swap(cur, next);
    }
    return cur;
}

/// Guided anisotropic diffusion of `target` under one or two guide images.
/// Per iteration: each guide takes one diffusion step under its own
/// coefficients (skipped when freeze_guides is set), the target's
/// coefficients are recomputed from the current guides (element-wise minimum
/// across guides), and the target takes one step. The guides' evolution is
/// internal; only the filtered target is returned.
inline RasterF guided_diffusion(const std::vector<RasterF>& guides, const RasterF& target,
                                const GadParams& params, int threads = 1) {
    if (guides.empty() || guides.size() > 2) {
        throw validation_error("guided_diffusion: expected 1 or 2 guide images, got " +
                               std::to_string(guides.size()));
    }
    for (const RasterF& g : guides) {
        if (g.width() != target.width() || g.height() != target.height()) {
            throw validation_error("guided_diffusion: guide/target dimension mismatch");
        }
    }
    const int w = target.width(), h = target.height();
    const int n_guides = static_cast<int>(guides.size());

    std::vector<RasterF> cur_guides(guides.begin(), guides.end());
    detail::CoeffPlanes planes[2];
    const detail::CoeffPlanes* planes_ptr[2] = {&planes[0], &planes[1]};
    for (int j = 0; j < n_guides; ++j) {
        detail::coeff_planes_into(cur_guides[j], params.kappa, planes[j], threads);
    }

    RasterF cur = target;
    RasterF next(w, h, target.channels());
    std::vector<RasterF> guide_next;
    for (int j = 0; j < n_guides; ++j) {
        guide_next.emplace_back(w, h, cur_guides[j].channels());
    }
    for (int i = 0; i < params.iterations; ++i) {
        if (!params.freeze_guides) {
            for (int j = 0; j < n_guides; ++j) {
                detail::diffuse_step_planes(cur_guides[j], planes_ptr + j, 1,
                                            params.lambda, guide_next[j], threads);
                std::swap(cur_guides[j], guide_next[j]);
                detail::coeff_planes_into(cur_guides[j], params.kappa, planes[j],
                                          threads);
            }
        }
        // The target step takes the element-wise minimum across the guides'
        // planes on the fly.
        detail::diffuse_step_planes(cur, planes_ptr, n_guides, params.lambda, next,
                                    threads);
        std::swap(cur, next);
    }
    return cur;
}

}  // namespace gad
