#include "support.hpp"

#include <fstream>
#include <iterator>

namespace testing_support {

std::vector<char> read_bytes(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<double> loop_conv3d(const std::vector<double>& in, std::int64_t C, std::int64_t D, std::int64_t H,
                                std::int64_t W, const std::vector<double>& k, std::int64_t K, std::int64_t kd,
                                std::int64_t kh, std::int64_t kw, const std::vector<double>& bias)
{
    std::vector<double> out(static_cast<std::size_t>(K * D * H * W));
    const auto pd = kd / 2, ph = kh / 2, pw = kw / 2;
    for (std::int64_t o = 0; o < K; ++o)
        for (std::int64_t z = 0; z < D; ++z)
            for (std::int64_t y = 0; y < H; ++y)
                for (std::int64_t x = 0; x < W; ++x) {
                    double s = bias[static_cast<std::size_t>(o)];
                    for (std::int64_t c = 0; c < C; ++c)
                        for (std::int64_t a = 0; a < kd; ++a)
                            for (std::int64_t b = 0; b < kh; ++b)
                                for (std::int64_t e = 0; e < kw; ++e) {
                                    const auto iz = z + a - pd, iy = y + b - ph, ix = x + e - pw;
                                    if (iz < 0 || iy < 0 || ix < 0 || iz >= D || iy >= H || ix >= W) continue;
                                    s += in[static_cast<std::size_t>(((c * D + iz) * H + iy) * W + ix)] *
                                         k[static_cast<std::size_t>((((o * C + c) * kd + a) * kh + b) * kw + e)];
                                }
                    out[static_cast<std::size_t>(((o * D + z) * H + y) * W + x)] = s;
                }
    return out;
}

} // namespace testing_support
