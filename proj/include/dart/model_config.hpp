#pragma once

#include <cstddef>

#include "dart/config.hpp"

namespace dart {

// Architecture hyperparameters shared by encoders, classifier, retrieval,
// generator, and correction. Training-run settings (learning rate,
// epochs, ...) live with the trainer instead.
struct ModelConfig {
    std::size_t d = 8;       // disease count == feature rows
    std::size_t e = 32;      // embedding width
    std::size_t heads = 4;   // attention heads (e % heads == 0)
    std::size_t blocks = 2;  // encoder self-attention blocks
    std::size_t dec_blocks = 2;
    std::size_t img_h = 32;
    std::size_t img_w = 32;
    std::size_t patch = 8;  // non-overlapping patch side
    std::size_t max_len = 64;
    std::size_t vocab_size = 0;  // fixed once the vocabulary is built
    std::size_t k = 3;           // retrieved reports per image
    std::size_t queue_capacity = 512;
    double tau_init = 0.07;  // contrastive temperature initial value

    std::size_t patches_per_view() const {
        return (img_h / patch) * (img_w / patch);
    }
    std::size_t patch_pixels() const { return patch * patch; }
    std::size_t ffn_hidden() const { return 4 * e; }

    void validate() const;

    // Reads the model.* keys of a flat config, leaving absent keys at
    // their defaults shown above.
    static ModelConfig from_config(const Config& cfg);
    void write_to(Config& cfg) const;
};

}  // namespace dart
