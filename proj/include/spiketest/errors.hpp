#pragma once

#include <stdexcept>
#include <string>

namespace spiketest {

// Root of every error raised by the library. The CLI maps subclasses onto
// exit codes, so each failure mode gets its own type.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

// spectral_measure
class PoleAtAtom : public Error {
public:
    using Error::Error;
};
class NotDistantSpike : public Error {
public:
    using Error::Error;
};
class OutsideDomain : public Error {
public:
    using Error::Error;
};
class NoConvergence : public Error {
public:
    using Error::Error;
};

// asymptotics
class DegenerateSpikes : public Error {
public:
    using Error::Error;
};

// factor_inference
class ZeroBulk : public Error {
public:
    using Error::Error;
};
class BelowThreshold : public Error {
public:
    using Error::Error;
};
class EmptyRange : public Error {
public:
    using Error::Error;
};
class DegenerateEigenvalue : public Error {
public:
    using Error::Error;
};
class NegativeNoiseEstimate : public Error {
public:
    using Error::Error;
};
class InsufficientSeparation : public Error {
public:
    using Error::Error;
};

} // namespace spiketest
