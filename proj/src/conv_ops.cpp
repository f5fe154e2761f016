#include <Eigen/Core>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "volseg/autodiff.hpp"

namespace volseg::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

/// Geometry of one conv3d application (shared by forward and backward).
struct ConvDims {
    int64_t ci, z, y, x;      // input channels and spatial extent
    int64_t co, kz, ky, kx;   // output channels and kernel extent
    int64_t sz, sy, sx;       // stride
    int64_t pz, py, px;       // zero padding
    int64_t oz, oy, ox;       // output spatial extent

    int64_t in_voxels() const { return z * y * x; }
    int64_t out_voxels() const { return oz * oy * ox; }
    int64_t patch_rows() const { return ci * kz * ky * kx; }
};

/// Unfolds one sample into a (ci*kz*ky*kx) x (oz*oy*ox) matrix, zero-filling
/// positions that fall outside the padded input.
void im2col(const double* x, const ConvDims& d, double* col) {
    const int64_t m = d.out_voxels();
    int64_t row = 0;
    for (int64_t c = 0; c < d.ci; ++c) {
        const double* xc = x + c * d.in_voxels();
        for (int64_t fz = 0; fz < d.kz; ++fz)
            for (int64_t fy = 0; fy < d.ky; ++fy)
                for (int64_t fx = 0; fx < d.kx; ++fx, ++row) {
                    double* out = col + row * m;
                    for (int64_t az = 0; az < d.oz; ++az) {
                        const int64_t iz = az * d.sz - d.pz + fz;
                        for (int64_t ay = 0; ay < d.oy; ++ay) {
                            const int64_t iy = ay * d.sy - d.py + fy;
                            double* orow = out + (az * d.oy + ay) * d.ox;
                            if (iz < 0 || iz >= d.z || iy < 0 || iy >= d.y) {
                                for (int64_t ax = 0; ax < d.ox; ++ax) orow[ax] = 0.0;
                                continue;
                            }
                            const double* irow = xc + (iz * d.y + iy) * d.x;
                            for (int64_t ax = 0; ax < d.ox; ++ax) {
                                const int64_t ix = ax * d.sx - d.px + fx;
                                orow[ax] = (ix < 0 || ix >= d.x) ? 0.0 : irow[ix];
                            }
                        }
                    }
                }
    }
}

/// Scatter-adds an unfolded gradient back onto the input layout; inverse of
/// the gather in im2col.
void col2im_add(const double* col, const ConvDims& d, double* gx) {
    const int64_t m = d.out_voxels();
    int64_t row = 0;
    for (int64_t c = 0; c < d.ci; ++c) {
        double* xc = gx + c * d.in_voxels();
        for (int64_t fz = 0; fz < d.kz; ++fz)
            for (int64_t fy = 0; fy < d.ky; ++fy)
                for (int64_t fx = 0; fx < d.kx; ++fx, ++row) {
                    const double* in = col + row * m;
                    for (int64_t az = 0; az < d.oz; ++az) {
                        const int64_t iz = az * d.sz - d.pz + fz;
                        if (iz < 0 || iz >= d.z) continue;
                        for (int64_t ay = 0; ay < d.oy; ++ay) {
                            const int64_t iy = ay * d.sy - d.py + fy;
                            if (iy < 0 || iy >= d.y) continue;
                            const double* irow = in + (az * d.oy + ay) * d.ox;
                            double* orow = xc + (iz * d.y + iy) * d.x;
                            for (int64_t ax = 0; ax < d.ox; ++ax) {
                                const int64_t ix = ax * d.sx - d.px + fx;
                                if (ix >= 0 && ix < d.x) orow[ix] += irow[ax];
                            }
                        }
                    }
                }
    }
}

bool is_pointwise(const ConvDims& d) {
    return d.kz == 1 && d.ky == 1 && d.kx == 1 && d.sz == 1 && d.sy == 1 &&
           d.sx == 1 && d.pz == 0 && d.py == 0 && d.px == 0;
}

}  // namespace

NodeId Tape::conv3d(NodeId x, NodeId w, NodeId b, Stride3 stride, Stride3 pad) {
    const Tensor& vx = value(x);
    const Tensor& vw = value(w);
    if (vx.rank() != 5 || vw.rank() != 5)
        throw std::invalid_argument("conv3d: expected x [n,ci,z,y,x] and w [co,ci,kz,ky,kx]");
    if (vx.dim(1) != vw.dim(1))
        throw std::invalid_argument("conv3d: input channels mismatch");

    ConvDims d;
    d.ci = vx.dim(1);
    d.z = vx.dim(2);
    d.y = vx.dim(3);
    d.x = vx.dim(4);
    d.co = vw.dim(0);
    d.kz = vw.dim(2);
    d.ky = vw.dim(3);
    d.kx = vw.dim(4);
    d.sz = stride[0];
    d.sy = stride[1];
    d.sx = stride[2];
    d.pz = pad[0];
    d.py = pad[1];
    d.px = pad[2];
    d.oz = (d.z + 2 * d.pz - d.kz) / d.sz + 1;
    d.oy = (d.y + 2 * d.py - d.ky) / d.sy + 1;
    d.ox = (d.x + 2 * d.px - d.kx) / d.sx + 1;
    if (d.oz < 1 || d.oy < 1 || d.ox < 1)
        throw std::invalid_argument("conv3d: kernel larger than padded input");
    const bool has_bias = b >= 0;
    if (has_bias && value(b).numel() != d.co)
        throw std::invalid_argument("conv3d: bias size mismatch");

    const int64_t n = vx.dim(0);
    const int64_t K = d.patch_rows();
    const int64_t M = d.out_voxels();
    const bool pointwise = is_pointwise(d);

    Tensor out({n, d.co, d.oz, d.oy, d.ox});
    {
        CMapMat W(vw.data(), d.co, K);
        std::vector<double> col;
        if (!pointwise) col.resize(static_cast<size_t>(K * M));
        for (int64_t i = 0; i < n; ++i) {
            const double* xp = vx.data() + i * d.ci * d.in_voxels();
            MapMat O(out.data() + i * d.co * M, d.co, M);
            if (pointwise) {
                CMapMat C(xp, K, M);
                O.noalias() = W * C;
            } else {
                im2col(xp, d, col.data());
                CMapMat C(col.data(), K, M);
                O.noalias() = W * C;
            }
            if (has_bias) {
                const Tensor& vb = value(b);
                for (int64_t c = 0; c < d.co; ++c) O.row(c).array() += vb[c];
            }
        }
    }

    std::vector<NodeId> parents = {x, w};
    if (has_bias) parents.push_back(b);
    NodeId self = custom(std::move(out), parents, nullptr);
    nodes_[self].backward = [self, x, w, b, has_bias, d, n, K, M, pointwise](Tape& t) {
        const Tensor& go = t.node(self).grad;
        const Tensor& vx = t.value(x);
        const Tensor& vw = t.value(w);
        const bool need_x = t.requires_grad(x);
        const bool need_w = t.requires_grad(w);
        const bool need_b = has_bias && t.requires_grad(b);
        Tensor* gx = need_x ? &t.grad_buffer(x) : nullptr;
        Tensor* gw = need_w ? &t.grad_buffer(w) : nullptr;
        Tensor* gb = need_b ? &t.grad_buffer(b) : nullptr;

        std::vector<double> col;
        if (need_w && !pointwise) col.resize(static_cast<size_t>(K * M));
        std::vector<double> colg;
        if (need_x && !pointwise) colg.resize(static_cast<size_t>(K * M));

        CMapMat W(vw.data(), d.co, K);
        for (int64_t i = 0; i < n; ++i) {
            CMapMat G(go.data() + i * d.co * M, d.co, M);
            if (gb)
                for (int64_t c = 0; c < d.co; ++c) (*gb)[c] += G.row(c).sum();
            const double* xp = vx.data() + i * d.ci * d.in_voxels();
            if (gw) {
                MapMat GW(gw->data(), d.co, K);
                if (pointwise) {
                    CMapMat C(xp, K, M);
                    GW.noalias() += G * C.transpose();
                } else {
                    im2col(xp, d, col.data());
                    CMapMat C(col.data(), K, M);
                    GW.noalias() += G * C.transpose();
                }
            }
            if (gx) {
                double* gxp = gx->data() + i * d.ci * d.in_voxels();
                if (pointwise) {
                    MapMat GX(gxp, K, M);
                    GX.noalias() += W.transpose() * G;
                } else {
                    MapMat CG(colg.data(), K, M);
                    CG.noalias() = W.transpose() * G;
                    col2im_add(colg.data(), d, gxp);
                }
            }
        }
    };
    return self;
}

NodeId Tape::conv3d_transpose(NodeId x, NodeId w, NodeId b, Stride3 stride) {
    const Tensor& vx = value(x);
    const Tensor& vw = value(w);
    if (vx.rank() != 5 || vw.rank() != 5)
        throw std::invalid_argument(
            "conv3d_transpose: expected x [n,ci,z,y,x] and w [ci,co,sz,sy,sx]");
    if (vx.dim(1) != vw.dim(0))
        throw std::invalid_argument("conv3d_transpose: input channels mismatch");
    if (vw.dim(2) != stride[0] || vw.dim(3) != stride[1] || vw.dim(4) != stride[2])
        throw std::invalid_argument("conv3d_transpose: kernel extent must equal stride");

    const int64_t n = vx.dim(0), ci = vx.dim(1), co = vw.dim(1);
    const int64_t z = vx.dim(2), y = vx.dim(3), xx = vx.dim(4);
    const int64_t sz = stride[0], sy = stride[1], sx = stride[2];
    const int64_t S = sz * sy * sx;     // voxels written per input voxel
    const int64_t M = z * y * xx;       // input voxels per channel
    const bool has_bias = b >= 0;
    if (has_bias && value(b).numel() != co)
        throw std::invalid_argument("conv3d_transpose: bias size mismatch");

    const int64_t oz = z * sz, oy = y * sy, ox = xx * sx;
    Tensor out({n, co, oz, oy, ox});
    {
        CMapMat W(vw.data(), ci, co * S);
        RowMat R(co * S, M);
        for (int64_t i = 0; i < n; ++i) {
            CMapMat X(vx.data() + i * ci * M, ci, M);
            R.noalias() = W.transpose() * X;
            // Each input voxel expands into its own sz*sy*sx block; with
            // kernel extent equal to stride the blocks tile without overlap.
            for (int64_t c = 0; c < co; ++c) {
                const double bias = has_bias ? value(b)[c] : 0.0;
                double* oc = out.data() + (i * co + c) * oz * oy * ox;
                for (int64_t fz = 0; fz < sz; ++fz)
                    for (int64_t fy = 0; fy < sy; ++fy)
                        for (int64_t fx = 0; fx < sx; ++fx) {
                            const double* rrow =
                                R.data() + (c * S + (fz * sy + fy) * sx + fx) * M;
                            for (int64_t iz = 0; iz < z; ++iz)
                                for (int64_t iy = 0; iy < y; ++iy) {
                                    const double* src = rrow + (iz * y + iy) * xx;
                                    double* dst = oc +
                                        ((iz * sz + fz) * oy + iy * sy + fy) * ox + fx;
                                    for (int64_t ix = 0; ix < xx; ++ix)
                                        dst[ix * sx] = src[ix] + bias;
                                }
                        }
            }
        }
    }

    std::vector<NodeId> parents = {x, w};
    if (has_bias) parents.push_back(b);
    NodeId self = custom(std::move(out), parents, nullptr);
    nodes_[self].backward = [self, x, w, b, has_bias, n, ci, co, z, y, xx, sz, sy,
                             sx, S, M, oz, oy, ox](Tape& t) {
        const Tensor& go = t.node(self).grad;
        const Tensor& vx = t.value(x);
        const Tensor& vw = t.value(w);
        const bool need_x = t.requires_grad(x);
        const bool need_w = t.requires_grad(w);
        const bool need_b = has_bias && t.requires_grad(b);
        Tensor* gx = need_x ? &t.grad_buffer(x) : nullptr;
        Tensor* gw = need_w ? &t.grad_buffer(w) : nullptr;
        Tensor* gb = need_b ? &t.grad_buffer(b) : nullptr;

        RowMat dR(co * S, M);
        CMapMat W(vw.data(), ci, co * S);
        for (int64_t i = 0; i < n; ++i) {
            for (int64_t c = 0; c < co; ++c) {
                const double* gc = go.data() + (i * co + c) * oz * oy * ox;
                for (int64_t fz = 0; fz < sz; ++fz)
                    for (int64_t fy = 0; fy < sy; ++fy)
                        for (int64_t fx = 0; fx < sx; ++fx) {
                            double* rrow =
                                dR.data() + (c * S + (fz * sy + fy) * sx + fx) * M;
                            for (int64_t iz = 0; iz < z; ++iz)
                                for (int64_t iy = 0; iy < y; ++iy) {
                                    double* dst = rrow + (iz * y + iy) * xx;
                                    const double* src = gc +
                                        ((iz * sz + fz) * oy + iy * sy + fy) * ox + fx;
                                    for (int64_t ix = 0; ix < xx; ++ix)
                                        dst[ix] = src[ix * sx];
                                }
                        }
                if (gb) {
                    double s = 0.0;
                    const int64_t ov = oz * oy * ox;
                    for (int64_t v = 0; v < ov; ++v) s += gc[v];
                    (*gb)[c] += s;
                }
            }
            if (gx) {
                MapMat GX(gx->data() + i * ci * M, ci, M);
                GX.noalias() += W * dR;
            }
            if (gw) {
                CMapMat X(vx.data() + i * ci * M, ci, M);
                MapMat GW(gw->data(), ci, co * S);
                GW.noalias() += X * dR.transpose();
            }
        }
    };
    return self;
}

}  // namespace volseg::ad
