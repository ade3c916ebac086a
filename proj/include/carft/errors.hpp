#pragma once

#include <stdexcept>
#include <string>

namespace carft {

// Error categories map onto the CLI exit codes:
//   config -> 2, data -> 3, numeric -> 4.
enum class errc { config, data, numeric };

class Error : public std::runtime_error {
public:
    Error(errc kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}

    errc kind() const { return kind_; }

    int exit_code() const {
        switch (kind_) {
            case errc::config: return 2;
            case errc::data: return 3;
            case errc::numeric: return 4;
        }
        return 1;
    }

private:
    errc kind_;
};

// Bad flags, missing inputs, invalid option combinations.
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(errc::config, msg) {}
};

// Malformed files, incompatible checkpoints, empty datasets.
struct DataError : Error {
    explicit DataError(const std::string& msg) : Error(errc::data, msg) {}
};

// Dimension mismatches, non-finite values, degenerate inputs, diverged training.
struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error(errc::numeric, msg) {}
};

}  // namespace carft
