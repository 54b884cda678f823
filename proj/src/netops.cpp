#include "pseudoseg/netops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include <Eigen/Core>

namespace pseudoseg::nn {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

using Dims = std::vector<std::int64_t>;

/// Conv problem normalized to 3 spatial axes.
struct ConvGeom {
    std::int64_t batch, in_ch, out_ch;
    std::array<std::int64_t, 3> in, k, out, pad, dil;

    std::int64_t in_vox() const { return in[0] * in[1] * in[2]; }
    std::int64_t out_vox() const { return out[0] * out[1] * out[2]; }
    std::int64_t taps() const { return k[0] * k[1] * k[2]; }
    std::int64_t rows() const { return in_ch * taps(); }
    bool pointwise() const { return taps() == 1 && pad == std::array<std::int64_t, 3>{0, 0, 0}; }
};

ConvGeom make_geom(const Dims& input, const Dims& kernels, const ConvOptions& opt, std::size_t spatial)
{
    require(input.size() == 2 + spatial, "conv: input must have rank " + std::to_string(2 + spatial));
    require(kernels.size() == 2 + spatial, "conv: kernels must have rank " + std::to_string(2 + spatial));
    require(input[1] == kernels[1], "conv: channel mismatch (input has " + std::to_string(input[1]) +
                                        ", kernels expect " + std::to_string(kernels[1]) + ")");
    ConvGeom g{};
    g.batch = input[0];
    g.in_ch = input[1];
    g.out_ch = kernels[0];
    const std::size_t lead = 3 - spatial;
    for (std::size_t a = 0; a < 3; ++a) {
        if (a < lead) {
            g.in[a] = 1;
            g.k[a] = 1;
            g.dil[a] = 1;
        } else {
            g.in[a] = input[2 + a - lead];
            g.k[a] = kernels[2 + a - lead];
            g.dil[a] = opt.dilation[a];
        }
        require(g.k[a] % 2 == 1, "conv: kernel sizes must be odd");
        require(g.dil[a] >= 1, "conv: dilation must be >= 1");
        const std::int64_t reach = g.dil[a] * (g.k[a] - 1);
        g.pad[a] = opt.padding == Padding::same ? reach / 2 : 0;
        g.out[a] = g.in[a] + 2 * g.pad[a] - reach;
        require(g.out[a] > 0, "conv: kernel larger than valid input extent");
    }
    return g;
}

Dims conv_out_dims(const ConvGeom& g, std::size_t spatial)
{
    Dims d{g.batch, g.out_ch};
    for (std::size_t a = 3 - spatial; a < 3; ++a) d.push_back(g.out[a]);
    return d;
}

constexpr std::int64_t kColBudget = 1 << 22;

std::int64_t planes_per_chunk(const ConvGeom& g)
{
    const std::int64_t per_plane = g.rows() * g.out[1] * g.out[2];
    return std::clamp<std::int64_t>(kColBudget / std::max<std::int64_t>(per_plane, 1), 1, g.out[0]);
}

/// Fills col (rows x (nz*Ho*Wo)) for output planes [oz0, oz0+nz) of one sample.
template <typename T>
void im2col(const ConvGeom& g, const T* in, std::int64_t oz0, std::int64_t nz, T* col)
{
    const std::int64_t Ho = g.out[1], Wo = g.out[2];
    const std::int64_t D = g.in[0], H = g.in[1], W = g.in[2];
    const std::int64_t cols = nz * Ho * Wo;
    std::int64_t r = 0;
    for (std::int64_t c = 0; c < g.in_ch; ++c)
        for (std::int64_t kz = 0; kz < g.k[0]; ++kz)
            for (std::int64_t ky = 0; ky < g.k[1]; ++ky)
                for (std::int64_t kx = 0; kx < g.k[2]; ++kx, ++r) {
                    T* row = col + r * cols;
                    const std::int64_t shift_x = kx * g.dil[2] - g.pad[2];
                    const std::int64_t lo = std::clamp<std::int64_t>(-shift_x, 0, Wo);
                    const std::int64_t hi = std::clamp<std::int64_t>(W - shift_x, lo, Wo);
                    for (std::int64_t z = 0; z < nz; ++z) {
                        const std::int64_t iz = oz0 + z + kz * g.dil[0] - g.pad[0];
                        for (std::int64_t oy = 0; oy < Ho; ++oy) {
                            T* dst = row + (z * Ho + oy) * Wo;
                            const std::int64_t iy = oy + ky * g.dil[1] - g.pad[1];
                            if (iz < 0 || iz >= D || iy < 0 || iy >= H) {
                                std::fill(dst, dst + Wo, T{});
                                continue;
                            }
                            const T* src = in + ((c * D + iz) * H + iy) * W + shift_x;
                            std::fill(dst, dst + lo, T{});
                            std::copy(src + lo, src + hi, dst + lo);
                            std::fill(dst + hi, dst + Wo, T{});
                        }
                    }
                }
}

/// Scatter-adds col back into the input-gradient buffer of one sample.
template <typename T>
void col2im(const ConvGeom& g, const T* col, std::int64_t oz0, std::int64_t nz, T* dx)
{
    const std::int64_t Ho = g.out[1], Wo = g.out[2];
    const std::int64_t D = g.in[0], H = g.in[1], W = g.in[2];
    const std::int64_t cols = nz * Ho * Wo;
    std::int64_t r = 0;
    for (std::int64_t c = 0; c < g.in_ch; ++c)
        for (std::int64_t kz = 0; kz < g.k[0]; ++kz)
            for (std::int64_t ky = 0; ky < g.k[1]; ++ky)
                for (std::int64_t kx = 0; kx < g.k[2]; ++kx, ++r) {
                    const T* row = col + r * cols;
                    const std::int64_t shift_x = kx * g.dil[2] - g.pad[2];
                    const std::int64_t lo = std::clamp<std::int64_t>(-shift_x, 0, Wo);
                    const std::int64_t hi = std::clamp<std::int64_t>(W - shift_x, lo, Wo);
                    for (std::int64_t z = 0; z < nz; ++z) {
                        const std::int64_t iz = oz0 + z + kz * g.dil[0] - g.pad[0];
                        if (iz < 0 || iz >= D) continue;
                        for (std::int64_t oy = 0; oy < Ho; ++oy) {
                            const std::int64_t iy = oy + ky * g.dil[1] - g.pad[1];
                            if (iy < 0 || iy >= H) continue;
                            const T* src = row + (z * Ho + oy) * Wo;
                            T* dst = dx + ((c * D + iz) * H + iy) * W + shift_x;
                            for (std::int64_t x = lo; x < hi; ++x) dst[x] += src[x];
                        }
                    }
                }
}

template <typename T>
Tensor<T> conv_forward(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& bias, const ConvOptions& opt,
                       std::size_t spatial)
{
    const ConvGeom g = make_geom(input.dims(), kernels.dims(), opt, spatial);
    require(bias.size() == static_cast<std::size_t>(g.out_ch), "conv: bias length must equal output channels");
    Tensor<T> out(conv_out_dims(g, spatial));
    const std::int64_t R = g.rows(), K = g.out_ch, plane = g.out[1] * g.out[2];
    CMapMat<T> w(kernels.ptr(), K, R, Eigen::OuterStride<>(R));
    const std::int64_t chunk = planes_per_chunk(g);
    std::vector<T> col(g.pointwise() ? 0 : static_cast<std::size_t>(R * chunk * plane));

    for (std::int64_t b = 0; b < g.batch; ++b) {
        const T* in = input.ptr() + b * g.in_ch * g.in_vox();
        T* o = out.ptr() + b * K * g.out_vox();
        for (std::int64_t oz0 = 0; oz0 < g.out[0]; oz0 += chunk) {
            const std::int64_t nz = std::min(chunk, g.out[0] - oz0);
            const std::int64_t cols = nz * plane;
            MapMat<T> dst(o + oz0 * plane, K, cols, Eigen::OuterStride<>(g.out_vox()));
            if (g.pointwise()) {
                CMapMat<T> src(in + oz0 * plane, R, cols, Eigen::OuterStride<>(g.in_vox()));
                dst.noalias() = w * src;
            } else {
                im2col(g, in, oz0, nz, col.data());
                CMapMat<T> src(col.data(), R, cols, Eigen::OuterStride<>(cols));
                dst.noalias() = w * src;
            }
            for (std::int64_t k = 0; k < K; ++k) dst.row(k).array() += bias[static_cast<std::size_t>(k)];
        }
    }
    return out;
}

template <typename T>
LayerGrads<T> conv_backward(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& grad_out,
                            const ConvOptions& opt, std::size_t spatial, bool need_input_grad)
{
    const ConvGeom g = make_geom(input.dims(), kernels.dims(), opt, spatial);
    require(grad_out.dims() == conv_out_dims(g, spatial), "conv backward: grad_out has wrong shape");
    const std::int64_t R = g.rows(), K = g.out_ch, plane = g.out[1] * g.out[2];
    LayerGrads<T> grads{need_input_grad ? Tensor<T>(input.dims()) : Tensor<T>(), Tensor<T>(kernels.dims()),
                        Tensor<T>({K})};
    CMapMat<T> w(kernels.ptr(), K, R, Eigen::OuterStride<>(R));
    MapMat<T> dw(grads.weights.ptr(), K, R, Eigen::OuterStride<>(R));
    const std::int64_t chunk = planes_per_chunk(g);
    std::vector<T> col(g.pointwise() ? 0 : static_cast<std::size_t>(R * chunk * plane));
    std::vector<T> dcol(need_input_grad && !g.pointwise() ? col.size() : 0);

    for (std::int64_t b = 0; b < g.batch; ++b) {
        const T* in = input.ptr() + b * g.in_ch * g.in_vox();
        const T* go = grad_out.ptr() + b * K * g.out_vox();
        T* dx = need_input_grad ? grads.input.ptr() + b * g.in_ch * g.in_vox() : nullptr;
        for (std::int64_t k = 0; k < K; ++k) {
            const T* row = go + k * g.out_vox();
            T s{};
            for (std::int64_t i = 0; i < g.out_vox(); ++i) s += row[i];
            grads.bias[static_cast<std::size_t>(k)] += s;
        }
        for (std::int64_t oz0 = 0; oz0 < g.out[0]; oz0 += chunk) {
            const std::int64_t nz = std::min(chunk, g.out[0] - oz0);
            const std::int64_t cols = nz * plane;
            CMapMat<T> gmat(go + oz0 * plane, K, cols, Eigen::OuterStride<>(g.out_vox()));
            if (g.pointwise()) {
                CMapMat<T> src(in + oz0 * plane, R, cols, Eigen::OuterStride<>(g.in_vox()));
                dw.noalias() += gmat * src.transpose();
                if (dx) {
                    MapMat<T> dsrc(dx + oz0 * plane, R, cols, Eigen::OuterStride<>(g.in_vox()));
                    dsrc.noalias() += w.transpose() * gmat;
                }
            } else {
                im2col(g, in, oz0, nz, col.data());
                CMapMat<T> src(col.data(), R, cols, Eigen::OuterStride<>(cols));
                dw.noalias() += gmat * src.transpose();
                if (dx) {
                    MapMat<T> dsrc(dcol.data(), R, cols, Eigen::OuterStride<>(cols));
                    dsrc.noalias() = w.transpose() * gmat;
                    col2im(g, dcol.data(), oz0, nz, dx);
                }
            }
        }
    }
    return grads;
}

/// Pooling/upsampling view: batch*channels planes of up to 3 spatial axes.
struct SpatialView {
    std::int64_t planes;
    std::array<std::int64_t, 3> ext;
};

SpatialView spatial_view(const Dims& dims, const char* op)
{
    require(dims.size() == 4 || dims.size() == 5, std::string(op) + ": input must have rank 4 or 5");
    SpatialView v{dims[0] * dims[1], {1, 1, 1}};
    const std::size_t lead = 5 - dims.size();
    for (std::size_t a = lead; a < 3; ++a) v.ext[a] = dims[2 + a - lead];
    return v;
}

std::array<std::int64_t, 3> spatial_factors(const Dims& dims, const Dims& f, const char* op)
{
    require(f.size() == dims.size() - 2, std::string(op) + ": need one factor per spatial axis");
    std::array<std::int64_t, 3> out{1, 1, 1};
    const std::size_t lead = 5 - dims.size();
    for (std::size_t a = lead; a < 3; ++a) out[a] = f[a - lead];
    return out;
}

} // namespace

Dims conv2d_shape(const Dims& input, const Dims& kernels, const ConvOptions& opt)
{
    return conv_out_dims(make_geom(input, kernels, opt, 2), 2);
}

Dims conv3d_shape(const Dims& input, const Dims& kernels, const ConvOptions& opt)
{
    return conv_out_dims(make_geom(input, kernels, opt, 3), 3);
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& bias, const ConvOptions& opt)
{
    return conv_forward(input, kernels, bias, opt, 2);
}

template <typename T>
LayerGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& grad_out,
                              const ConvOptions& opt, bool need_input_grad)
{
    return conv_backward(input, kernels, grad_out, opt, 2, need_input_grad);
}

template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& bias, const ConvOptions& opt)
{
    return conv_forward(input, kernels, bias, opt, 3);
}

template <typename T>
LayerGrads<T> conv3d_backward(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& grad_out,
                              const ConvOptions& opt, bool need_input_grad)
{
    return conv_backward(input, kernels, grad_out, opt, 3, need_input_grad);
}

Dims maxpool_shape(const Dims& input, const Dims& window)
{
    const auto w = spatial_factors(input, window, "maxpool");
    Dims out = input;
    for (std::size_t i = 2; i < input.size(); ++i) {
        const auto f = window[i - 2];
        require(f >= 1, "maxpool: window must be >= 1");
        require(input[i] % f == 0, "maxpool: spatial dim " + std::to_string(input[i]) + " not divisible by window " +
                                       std::to_string(f));
        out[i] = input[i] / f;
    }
    (void)w;
    return out;
}

template <typename T>
MaxPoolResult<T> maxpool(const Tensor<T>& input, const Dims& window)
{
    const Dims out_dims = maxpool_shape(input.dims(), window);
    const auto v = spatial_view(input.dims(), "maxpool");
    const auto f = spatial_factors(input.dims(), window, "maxpool");
    const std::array<std::int64_t, 3> o{v.ext[0] / f[0], v.ext[1] / f[1], v.ext[2] / f[2]};
    MaxPoolResult<T> r{Tensor<T>(out_dims), std::vector<std::int64_t>(static_cast<std::size_t>(Tensor<T>::count(out_dims)))};
    const std::int64_t in_plane = v.ext[0] * v.ext[1] * v.ext[2];
    const std::int64_t out_plane = o[0] * o[1] * o[2];
    for (std::int64_t p = 0; p < v.planes; ++p) {
        std::int64_t k = p * out_plane;
        for (std::int64_t z = 0; z < o[0]; ++z)
            for (std::int64_t y = 0; y < o[1]; ++y)
                for (std::int64_t x = 0; x < o[2]; ++x, ++k) {
                    std::int64_t best = -1;
                    for (std::int64_t dz = 0; dz < f[0]; ++dz)
                        for (std::int64_t dy = 0; dy < f[1]; ++dy)
                            for (std::int64_t dx = 0; dx < f[2]; ++dx) {
                                const std::int64_t idx =
                                    p * in_plane + ((z * f[0] + dz) * v.ext[1] + (y * f[1] + dy)) * v.ext[2] + x * f[2] + dx;
                                if (best < 0 || input[static_cast<std::size_t>(idx)] > input[static_cast<std::size_t>(best)]) best = idx;
                            }
                    r.output[static_cast<std::size_t>(k)] = input[static_cast<std::size_t>(best)];
                    r.argmax[static_cast<std::size_t>(k)] = best;
                }
    }
    return r;
}

template <typename T>
Tensor<T> maxpool_backward(const MaxPoolResult<T>& forward, const Dims& input_dims, const Tensor<T>& grad_out)
{
    require(grad_out.dims() == forward.output.dims(), "maxpool backward: grad_out has wrong shape");
    Tensor<T> dx(input_dims);
    for (std::size_t i = 0; i < forward.argmax.size(); ++i) dx[static_cast<std::size_t>(forward.argmax[i])] += grad_out[i];
    return dx;
}

Dims upsample_shape(const Dims& input, const Dims& factor)
{
    spatial_factors(input, factor, "upsample");
    Dims out = input;
    for (std::size_t i = 2; i < input.size(); ++i) {
        require(factor[i - 2] >= 1, "upsample: factor must be >= 1");
        out[i] = input[i] * factor[i - 2];
    }
    return out;
}

template <typename T>
Tensor<T> upsample(const Tensor<T>& input, const Dims& factor)
{
    Tensor<T> out(upsample_shape(input.dims(), factor));
    const auto v = spatial_view(input.dims(), "upsample");
    const auto f = spatial_factors(input.dims(), factor, "upsample");
    const std::array<std::int64_t, 3> o{v.ext[0] * f[0], v.ext[1] * f[1], v.ext[2] * f[2]};
    const std::int64_t in_plane = v.ext[0] * v.ext[1] * v.ext[2];
    std::size_t k = 0;
    for (std::int64_t p = 0; p < v.planes; ++p)
        for (std::int64_t z = 0; z < o[0]; ++z)
            for (std::int64_t y = 0; y < o[1]; ++y) {
                const T* src = input.ptr() + p * in_plane + ((z / f[0]) * v.ext[1] + y / f[1]) * v.ext[2];
                for (std::int64_t x = 0; x < o[2]; ++x) out[k++] = src[x / f[2]];
            }
    return out;
}

template <typename T>
Tensor<T> upsample_backward(const Tensor<T>& grad_out, const Dims& factor)
{
    const auto f = spatial_factors(grad_out.dims(), factor, "upsample");
    Dims in_dims = grad_out.dims();
    for (std::size_t i = 2; i < in_dims.size(); ++i) {
        require(in_dims[i] % factor[i - 2] == 0, "upsample backward: grad dims not divisible by factor");
        in_dims[i] /= factor[i - 2];
    }
    Tensor<T> dx(in_dims);
    const auto v = spatial_view(in_dims, "upsample");
    const std::array<std::int64_t, 3> o{v.ext[0] * f[0], v.ext[1] * f[1], v.ext[2] * f[2]};
    const std::int64_t in_plane = v.ext[0] * v.ext[1] * v.ext[2];
    std::size_t k = 0;
    for (std::int64_t p = 0; p < v.planes; ++p)
        for (std::int64_t z = 0; z < o[0]; ++z)
            for (std::int64_t y = 0; y < o[1]; ++y) {
                T* dst = dx.ptr() + p * in_plane + ((z / f[0]) * v.ext[1] + y / f[1]) * v.ext[2];
                for (std::int64_t x = 0; x < o[2]; ++x) dst[x / f[2]] += grad_out[k++];
            }
    return dx;
}

template <typename T>
Tensor<T> dense(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias)
{
    require(input.rank() == 2 && weights.rank() == 2, "dense: input and weights must be matrices");
    require(input.dim(1) == weights.dim(1), "dense: input width does not match weights");
    require(bias.size() == static_cast<std::size_t>(weights.dim(0)), "dense: bias length must equal output width");
    const std::int64_t B = input.dim(0), N = input.dim(1), M = weights.dim(0);
    Tensor<T> out({B, M});
    CMapMat<T> x(input.ptr(), B, N, Eigen::OuterStride<>(N));
    CMapMat<T> w(weights.ptr(), M, N, Eigen::OuterStride<>(N));
    MapMat<T> y(out.ptr(), B, M, Eigen::OuterStride<>(M));
    y.noalias() = x * w.transpose();
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t m = 0; m < M; ++m) y(b, m) += bias[static_cast<std::size_t>(m)];
    return out;
}

template <typename T>
LayerGrads<T> dense_backward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& grad_out)
{
    const std::int64_t B = input.dim(0), N = input.dim(1), M = weights.dim(0);
    require(grad_out.dims() == Dims({B, M}), "dense backward: grad_out has wrong shape");
    LayerGrads<T> g{Tensor<T>(input.dims()), Tensor<T>(weights.dims()), Tensor<T>({M})};
    CMapMat<T> x(input.ptr(), B, N, Eigen::OuterStride<>(N));
    CMapMat<T> w(weights.ptr(), M, N, Eigen::OuterStride<>(N));
    CMapMat<T> gy(grad_out.ptr(), B, M, Eigen::OuterStride<>(M));
    MapMat<T> dx(g.input.ptr(), B, N, Eigen::OuterStride<>(N));
    MapMat<T> dw(g.weights.ptr(), M, N, Eigen::OuterStride<>(N));
    dx.noalias() = gy * w;
    dw.noalias() = gy.transpose() * x;
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t m = 0; m < M; ++m) g.bias[static_cast<std::size_t>(m)] += gy(b, m);
    return g;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& input)
{
    Tensor<T> out(input.dims());
    for (std::size_t i = 0; i < input.size(); ++i) {
        const T x = input[i];
        // Evaluate on the side that cannot overflow.
        if (x >= 0) {
            out[i] = T(1) / (T(1) + std::exp(-x));
        } else {
            const T e = std::exp(x);
            out[i] = e / (T(1) + e);
        }
    }
    return out;
}

template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& output, const Tensor<T>& grad_out)
{
    require(output.dims() == grad_out.dims(), "sigmoid backward: shape mismatch");
    Tensor<T> dx(output.dims());
    for (std::size_t i = 0; i < output.size(); ++i) dx[i] = grad_out[i] * output[i] * (T(1) - output[i]);
    return dx;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& input)
{
    Tensor<T> out = input;
    relu_inplace(out);
    return out;
}

template <typename T>
void relu_inplace(Tensor<T>& t)
{
    for (auto& v : t.data()) v = v > T(0) ? v : T(0);
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out)
{
    require(input.dims() == grad_out.dims(), "relu backward: shape mismatch");
    Tensor<T> dx(input.dims());
    for (std::size_t i = 0; i < input.size(); ++i) dx[i] = input[i] > T(0) ? grad_out[i] : T(0);
    return dx;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b)
{
    require(a.rank() == b.rank() && a.rank() >= 2, "concat: rank mismatch");
    require(a.dim(0) == b.dim(0), "concat: batch mismatch");
    for (std::size_t i = 2; i < a.rank(); ++i) require(a.dim(i) == b.dim(i), "concat: spatial mismatch");
    Dims d = a.dims();
    d[1] += b.dim(1);
    Tensor<T> out(d);
    const std::size_t na = a.size() / static_cast<std::size_t>(a.dim(0));
    const std::size_t nb = b.size() / static_cast<std::size_t>(b.dim(0));
    for (std::int64_t n = 0; n < a.dim(0); ++n) {
        T* dst = out.ptr() + static_cast<std::size_t>(n) * (na + nb);
        std::copy_n(a.ptr() + static_cast<std::size_t>(n) * na, na, dst);
        std::copy_n(b.ptr() + static_cast<std::size_t>(n) * nb, nb, dst + na);
    }
    return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& grad, std::int64_t channels_a)
{
    require(channels_a > 0 && channels_a < grad.dim(1), "split: bad channel split");
    Dims da = grad.dims(), db = grad.dims();
    da[1] = channels_a;
    db[1] = grad.dim(1) - channels_a;
    Tensor<T> a(da), b(db);
    const std::size_t na = a.size() / static_cast<std::size_t>(a.dim(0));
    const std::size_t nb = b.size() / static_cast<std::size_t>(b.dim(0));
    for (std::int64_t n = 0; n < grad.dim(0); ++n) {
        const T* src = grad.ptr() + static_cast<std::size_t>(n) * (na + nb);
        std::copy_n(src, na, a.ptr() + static_cast<std::size_t>(n) * na);
        std::copy_n(src + na, nb, b.ptr() + static_cast<std::size_t>(n) * nb);
    }
    return {std::move(a), std::move(b)};
}

template <typename T>
Tensor<T> group_norm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta, std::int64_t groups,
                     GroupNormCache<T>* cache)
{
    require(input.rank() >= 3, "group_norm: input needs spatial axes");
    const std::int64_t B = input.dim(0), C = input.dim(1);
    require(groups >= 1 && C % groups == 0, "group_norm: channels not divisible by groups");
    require(gamma.size() == static_cast<std::size_t>(C) && beta.size() == static_cast<std::size_t>(C),
            "group_norm: gamma/beta must have one entry per channel");
    const std::int64_t S = static_cast<std::int64_t>(input.size()) / (B * C);
    const std::int64_t cpg = C / groups;
    const std::int64_t n = cpg * S;
    constexpr T eps = T(1e-5);
    GroupNormCache<T> local;
    GroupNormCache<T>& c = cache ? *cache : local;
    c.mean.assign(static_cast<std::size_t>(B * groups), T{});
    c.inv_std.assign(static_cast<std::size_t>(B * groups), T{});
    c.normalized = Tensor<T>(input.dims());
    Tensor<T> out(input.dims());
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t g = 0; g < groups; ++g) {
            const std::size_t base = static_cast<std::size_t>((b * C + g * cpg) * S);
            T mean{};
            for (std::int64_t i = 0; i < n; ++i) mean += input[base + static_cast<std::size_t>(i)];
            mean /= static_cast<T>(n);
            T var{};
            for (std::int64_t i = 0; i < n; ++i) {
                const T d = input[base + static_cast<std::size_t>(i)] - mean;
                var += d * d;
            }
            var /= static_cast<T>(n);
            const T inv = T(1) / std::sqrt(var + eps);
            c.mean[static_cast<std::size_t>(b * groups + g)] = mean;
            c.inv_std[static_cast<std::size_t>(b * groups + g)] = inv;
            for (std::int64_t ch = 0; ch < cpg; ++ch) {
                const auto cc = static_cast<std::size_t>(g * cpg + ch);
                for (std::int64_t s = 0; s < S; ++s) {
                    const std::size_t i = base + static_cast<std::size_t>(ch * S + s);
                    const T xh = (input[i] - mean) * inv;
                    c.normalized[i] = xh;
                    out[i] = xh * gamma[cc] + beta[cc];
                }
            }
        }
    return out;
}

template <typename T>
LayerGrads<T> group_norm_backward(const GroupNormCache<T>& cache, const Tensor<T>& gamma, std::int64_t groups,
                                  const Tensor<T>& grad_out)
{
    const auto& xh = cache.normalized;
    require(xh.dims() == grad_out.dims(), "group_norm backward: shape mismatch");
    const std::int64_t B = xh.dim(0), C = xh.dim(1);
    const std::int64_t S = static_cast<std::int64_t>(xh.size()) / (B * C);
    const std::int64_t cpg = C / groups;
    const std::int64_t n = cpg * S;
    LayerGrads<T> g{Tensor<T>(xh.dims()), Tensor<T>({C}), Tensor<T>({C})};
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t gr = 0; gr < groups; ++gr) {
            const std::size_t base = static_cast<std::size_t>((b * C + gr * cpg) * S);
            T sum_d{}, sum_dx{};
            for (std::int64_t ch = 0; ch < cpg; ++ch) {
                const auto cc = static_cast<std::size_t>(gr * cpg + ch);
                for (std::int64_t s = 0; s < S; ++s) {
                    const std::size_t i = base + static_cast<std::size_t>(ch * S + s);
                    const T d = grad_out[i] * gamma[cc];
                    sum_d += d;
                    sum_dx += d * xh[i];
                    g.weights[cc] += grad_out[i] * xh[i];
                    g.bias[cc] += grad_out[i];
                }
            }
            const T inv = cache.inv_std[static_cast<std::size_t>(b * groups + gr)];
            const T nn = static_cast<T>(n);
            for (std::int64_t ch = 0; ch < cpg; ++ch) {
                const auto cc = static_cast<std::size_t>(gr * cpg + ch);
                for (std::int64_t s = 0; s < S; ++s) {
                    const std::size_t i = base + static_cast<std::size_t>(ch * S + s);
                    const T d = grad_out[i] * gamma[cc];
                    g.input[i] = inv / nn * (nn * d - sum_d - xh[i] * sum_dx);
                }
            }
        }
    return g;
}

#define PSEUDOSEG_INSTANTIATE(T)                                                                                       \
    template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const ConvOptions&);               \
    template LayerGrads<T> conv2d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const ConvOptions&,   \
                                           bool);                                                                      \
    template Tensor<T> conv3d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const ConvOptions&);               \
    template LayerGrads<T> conv3d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const ConvOptions&,   \
                                           bool);                                                                      \
    template MaxPoolResult<T> maxpool(const Tensor<T>&, const Dims&);                                                  \
    template Tensor<T> maxpool_backward(const MaxPoolResult<T>&, const Dims&, const Tensor<T>&);                       \
    template Tensor<T> upsample(const Tensor<T>&, const Dims&);                                                        \
    template Tensor<T> upsample_backward(const Tensor<T>&, const Dims&);                                               \
    template Tensor<T> dense(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                                    \
    template LayerGrads<T> dense_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                       \
    template Tensor<T> sigmoid(const Tensor<T>&);                                                                      \
    template Tensor<T> sigmoid_backward(const Tensor<T>&, const Tensor<T>&);                                           \
    template Tensor<T> relu(const Tensor<T>&);                                                                         \
    template void relu_inplace(Tensor<T>&);                                                                            \
    template Tensor<T> relu_backward(const Tensor<T>&, const Tensor<T>&);                                              \
    template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);                                            \
    template std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>&, std::int64_t);                           \
    template Tensor<T> group_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::int64_t,                  \
                                  GroupNormCache<T>*);                                                                 \
    template LayerGrads<T> group_norm_backward(const GroupNormCache<T>&, const Tensor<T>&, std::int64_t,               \
                                               const Tensor<T>&);

PSEUDOSEG_INSTANTIATE(float)
PSEUDOSEG_INSTANTIATE(double)

#undef PSEUDOSEG_INSTANTIATE

} // namespace pseudoseg::nn
