// Overfits a fresh k=2 model on a single synthetic tuple for a few hundred steps, then reports
// how well the container matches the cover and how well each secret comes back.
//
//     hide_and_reveal [steps] [side]

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <random>

#include "deepsteg/deepsteg.hpp"

using namespace deepsteg;

static ImageTensor pattern(std::size_t side, double fx, double fy, double phase) {
    ImageTensor img(Shape{1, side, side, 3});
    for (std::size_t y = 0; y < side; ++y)
        for (std::size_t x = 0; x < side; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                img(0, y, x, c) = static_cast<float>(
                    0.5 + 0.4 * std::sin(fx * static_cast<double>(x) + fy * static_cast<double>(y) + phase + 2.0 * static_cast<double>(c)));
    return img;
}

int main(int argc, char** argv) {
    const int steps = argc > 1 ? std::atoi(argv[1]) : 300;
    const std::size_t side = argc > 2 ? static_cast<std::size_t>(std::atoi(argv[2])) : 16;

    NetworkSpec spec;
    spec.k = 2;
    StegoBatch<float> batch;
    batch.cover = pattern(side, 0.3, 0.1, 0.0);
    batch.secrets = {pattern(side, 0.05, 0.4, 1.0), pattern(side, 0.2, 0.2, 2.5)};

    Trainer<float> trainer(init_params<float>(spec, 7), 1.0, 1.0, 0.01);
    std::mt19937_64 rng(7);
    for (int s = 0; s < steps; ++s) {
        const auto r = trainer.train_batch(batch, 1e-3, rng);
        if (s % 50 == 0 || s + 1 == steps)
            std::printf("step %3d  total %9.3f  cover %8.3f  secrets %8.3f %8.3f\n", s, r.total, r.cover_term,
                        r.secret_terms[0], r.secret_terms[1]);
    }

    const auto container = encode_forward(trainer.model(), batch);
    const auto decoded = decode_all(trainer.model(), container);
    std::printf("cover    PSNR %.2f dB  SSIM %.3f\n", psnr(batch.cover, container), ssim(batch.cover, container));
    for (std::size_t i = 0; i < decoded.size(); ++i)
        std::printf("secret %zu PSNR %.2f dB  SSIM %.3f\n", i + 1, psnr(batch.secrets[i], decoded[i]),
                    ssim(batch.secrets[i], decoded[i]));
}
