#pragma once

#include "fsprompt/dataset.hpp"
#include "fsprompt/encoder.hpp"
#include "fsprompt/pretrain.hpp"
#include "fsprompt/trainer.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace fsprompt {

// Everything needed to reproduce a run end to end.
struct RunConfig {
    EncoderConfig encoder;
    DatasetConfig pretrain_data;
    PretrainOptions pretrain;
    DatasetConfig data;  // downstream corpus
    TaskOptions task;
    TrainConfig train;

    RunConfig();

    void validate() const;
    TaskOptions task_options() const;  // task with shots taken from train

    // Flat "key = value" text, one field per line, '#' starts a comment.
    // Train fields use their plain names (lambda_fs, lr, batch_size, ...).
    void set(const std::string& key, const std::string& value);
    std::string get(const std::string& key) const;
    static const std::vector<std::string>& keys();

    std::string serialize() const;
    static RunConfig parse(const std::string& text);
    static RunConfig load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;
};

}  // namespace fsprompt
