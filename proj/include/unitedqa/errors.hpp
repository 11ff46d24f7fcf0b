#pragma once

#include <stdexcept>
#include <string>

namespace unitedqa {

/// Malformed or unusable external input (files, datasets, corpora).
/// The CLI maps this to exit code 2.
struct InputError : std::runtime_error {
    explicit InputError(const std::string& what) : std::runtime_error(what) {}
};

/// Raised when a training set contains nothing trainable, e.g. no question
/// has a correct span in any retrieved passage. CLI exit code 3.
struct NoTrainableData : std::runtime_error {
    explicit NoTrainableData(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace unitedqa
