// Classical bit-plane hiding of three secrets in one cover, for comparison with the networks.

#include <cstdio>
#include <random>
#include <vector>

#include "deepsteg/deepsteg.hpp"

using namespace deepsteg;

int main() {
    std::mt19937 rng(3);
    std::uniform_int_distribution<int> byte(0, 255);
    auto random_image = [&] {
        Image8 img{64, 64, std::vector<std::uint8_t>(64 * 64 * 3)};
        for (auto& b : img.bytes) b = static_cast<std::uint8_t>(byte(rng));
        return img;
    };
    const Image8 cover = random_image();
    const std::vector<Image8> secrets{random_image(), random_image(), random_image()};

    const auto plan = LsbPlan::even_split(secrets.size());
    const auto container = lsb_embed(cover, secrets, plan);
    const auto recovered = lsb_extract(container, plan);

    std::printf("plan: %zu secrets x %zu bits, cover keeps %zu bits\n", plan.k, plan.bits_per_secret,
                plan.cover_bits_kept());
    std::printf("cover     PSNR %.2f dB\n", psnr(from_image8(cover), from_image8(container)));
    for (std::size_t i = 0; i < recovered.size(); ++i)
        std::printf("secret %zu PSNR %.2f dB\n", i + 1, psnr(from_image8(secrets[i]), from_image8(recovered[i])));
}
