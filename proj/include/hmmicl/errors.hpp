#pragma once

#include <stdexcept>
#include <string>

namespace hmmicl {

// Invalid sizes, rank > num_hidden, mismatched sequence lengths, etc.
class DimensionError : public std::invalid_argument {
public:
    explicit DimensionError(const std::string& what) : std::invalid_argument(what) {}
};

// Bayes filter normalizer fell below the degeneracy threshold; the caller
// decides the fallback.
class DegenerateLikelihoodError : public std::runtime_error {
public:
    explicit DegenerateLikelihoodError(const std::string& what, double normalizer)
        : std::runtime_error(what), normalizer_(normalizer) {}
    double normalizer() const { return normalizer_; }

private:
    double normalizer_;
};

// ZZ^T not numerically invertible at ridge 0; carries the offending eigenvalue.
class SingularGramError : public std::runtime_error {
public:
    SingularGramError(const std::string& what, double min_eigenvalue)
        : std::runtime_error(what), min_eigenvalue_(min_eigenvalue) {}
    double min_eigenvalue() const { return min_eigenvalue_; }

private:
    double min_eigenvalue_;
};

// FeatureMap block ranges would not fit inside the embedding width D.
class CapacityError : public std::runtime_error {
public:
    explicit CapacityError(const std::string& what) : std::runtime_error(what) {}
};

class ShapeError : public std::invalid_argument {
public:
    explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

// A row-encoder layer broke its contract (row count / width preservation).
class EncoderContractError : public std::runtime_error {
public:
    explicit EncoderContractError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace hmmicl
