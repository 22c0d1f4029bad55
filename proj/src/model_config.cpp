#include "dart/model_config.hpp"

#include "dart/error.hpp"

namespace dart {

void ModelConfig::validate() const {
    if (d < 2) throw UsageError("model: d must be >= 2");
    if (e < 2) throw UsageError("model: e must be >= 2");
    if (heads == 0 || e % heads != 0) {
        throw UsageError("model: heads must divide e");
    }
    if (blocks == 0 || dec_blocks == 0) throw UsageError("model: need at least one block");
    if (patch < 1 || img_h % patch != 0 || img_w % patch != 0) {
        throw UsageError("model: patch must divide image height and width");
    }
    if (img_h < 8 || img_w < 8) throw UsageError("model: images must be at least 8x8");
    if (max_len < 4) throw UsageError("model: max_len must be >= 4");
    if (queue_capacity == 0) throw UsageError("model: queue capacity must be >= 1");
    if (!(tau_init > 0.0)) throw UsageError("model: tau must be > 0");
}

ModelConfig ModelConfig::from_config(const Config& cfg) {
    ModelConfig m;
    m.d = static_cast<std::size_t>(cfg.get_int_or("model.d", 8));
    m.e = static_cast<std::size_t>(cfg.get_int_or("model.e", 32));
    m.heads = static_cast<std::size_t>(cfg.get_int_or("model.heads", 4));
    m.blocks = static_cast<std::size_t>(cfg.get_int_or("model.blocks", 2));
    m.dec_blocks = static_cast<std::size_t>(cfg.get_int_or("model.dec_blocks", 2));
    m.img_h = static_cast<std::size_t>(cfg.get_int_or("model.img_h", 32));
    m.img_w = static_cast<std::size_t>(cfg.get_int_or("model.img_w", 32));
    m.patch = static_cast<std::size_t>(cfg.get_int_or("model.patch", 8));
    m.max_len = static_cast<std::size_t>(cfg.get_int_or("model.max_len", 64));
    m.vocab_size = static_cast<std::size_t>(cfg.get_int_or("model.vocab_size", 0));
    m.k = static_cast<std::size_t>(cfg.get_int_or("model.k", 3));
    m.queue_capacity = static_cast<std::size_t>(cfg.get_int_or("model.queue", 512));
    m.tau_init = cfg.get_double_or("model.tau_init", 0.07);
    m.validate();
    return m;
}

void ModelConfig::write_to(Config& cfg) const {
    cfg.set_int("model.d", static_cast<std::int64_t>(d));
    cfg.set_int("model.e", static_cast<std::int64_t>(e));
    cfg.set_int("model.heads", static_cast<std::int64_t>(heads));
    cfg.set_int("model.blocks", static_cast<std::int64_t>(blocks));
    cfg.set_int("model.dec_blocks", static_cast<std::int64_t>(dec_blocks));
    cfg.set_int("model.img_h", static_cast<std::int64_t>(img_h));
    cfg.set_int("model.img_w", static_cast<std::int64_t>(img_w));
    cfg.set_int("model.patch", static_cast<std::int64_t>(patch));
    cfg.set_int("model.max_len", static_cast<std::int64_t>(max_len));
    cfg.set_int("model.vocab_size", static_cast<std::int64_t>(vocab_size));
    cfg.set_int("model.k", static_cast<std::int64_t>(k));
    cfg.set_int("model.queue", static_cast<std::int64_t>(queue_capacity));
    cfg.set_double("model.tau_init", tau_init);
}

}  // namespace dart
