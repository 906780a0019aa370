#pragma once

#include "fsprompt/encoder.hpp"
#include "fsprompt/prompts.hpp"
#include "fsprompt/surgery.hpp"
#include "fsprompt/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace fsprompt {

// Flat archive of named matrices.
//
// Layout (all integers little-endian):
//   magic    8 bytes  "FSPCKPT\0"
//   version  u32      kCheckpointVersion
//   count    u64
//   count x entry, ordered by name (byte-wise):
//     name_len u32, name bytes (UTF-8, no terminator)
//     rows u64, cols u64
//     rows*cols IEEE-754 binary64 values, row-major
//
// Names are namespaced: "backbone/...", "backbone_config/...",
// "prompts/...", "surgery/...". Identical contents give identical bytes.
class Checkpoint {
public:
    static constexpr std::uint32_t kVersion = 1;

    void put(const std::string& name, const Tensor& value);
    bool has(const std::string& name) const { return entries_.count(name) != 0; }
    const Tensor& get(const std::string& name) const;
    double get_scalar(const std::string& name) const;
    const std::map<std::string, Tensor>& entries() const noexcept { return entries_; }

    std::vector<std::uint8_t> serialize() const;
    static Checkpoint deserialize(const std::vector<std::uint8_t>& bytes);

    void save(const std::filesystem::path& path) const;
    static Checkpoint load(const std::filesystem::path& path);

private:
    std::map<std::string, Tensor> entries_;
};

void store_backbone(Checkpoint& ckpt, const BackboneWeights& weights);
// Returns frozen weights.
BackboneWeights load_backbone(const Checkpoint& ckpt);

void store_prompts(Checkpoint& ckpt, const PromptSet& prompts);
PromptSet load_prompts(const Checkpoint& ckpt);

void store_surgery(Checkpoint& ckpt, const SurgeryParams& surgery);
// Gains are not stored; they come from the run config.
SurgeryParams load_surgery(const Checkpoint& ckpt, double gamma, double beta);

}  // namespace fsprompt
