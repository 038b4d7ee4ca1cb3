#pragma once

#include <stdexcept>
#include <string>

namespace textmirror {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// An in-process agent produced output the harness refuses to carry
// (empty text, embedded newline).
struct AgentMisbehavior : Error {
    using Error::Error;
};

// Operation not available for this agent kind (e.g. shadow spawn or
// analytic likelihood on an external black box).
struct UnsupportedCapability : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

// Wire protocol errors.
struct HandshakeFailure : Error {
    using Error::Error;
};

struct ProtocolViolation : Error {
    using Error::Error;
};

// The counterpart process timed out, crashed, or closed its stream.
// Trials ending here are aborted and excluded from scoring.
struct CounterpartFailure : Error {
    using Error::Error;
};

struct RebindDenied : Error {
    using Error::Error;
};

}  // namespace textmirror
