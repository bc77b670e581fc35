// SPDX-License-Identifier: Apache-2.0

#include "mgpt/error.hpp"

namespace mgpt {

std::string_view to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Domain: return "domain_error";
        case ErrorKind::Data: return "data_error";
        case ErrorKind::Io: return "io_error";
        case ErrorKind::Config: return "config_error";
        case ErrorKind::Parse: return "parse_error";
        case ErrorKind::Training: return "training_error";
        case ErrorKind::Generation: return "generation_error";
    }
    return "error";
}

}  // namespace mgpt
