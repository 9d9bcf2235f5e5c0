#pragma once

#include <stdexcept>
#include <string>

namespace fasa {

// Base of every error the toolkit throws. Callers that only care about
// "something in the pipeline failed" can catch this.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define FASA_DEFINE_ERROR(Name)            \
    class Name : public Error {            \
    public:                                \
        using Error::Error;                \
    }

FASA_DEFINE_ERROR(SchemaError);
FASA_DEFINE_ERROR(IdCollision);
FASA_DEFINE_ERROR(MalformedTier);
FASA_DEFINE_ERROR(IoError);
FASA_DEFINE_ERROR(SpawnError);
FASA_DEFINE_ERROR(UnsupportedFormat);
FASA_DEFINE_ERROR(OutOfRange);
FASA_DEFINE_ERROR(UnknownId);
FASA_DEFINE_ERROR(DuplicateDecision);
FASA_DEFINE_ERROR(AlreadyDecided);
FASA_DEFINE_ERROR(MissingManualText);
FASA_DEFINE_ERROR(MissingGold);
FASA_DEFINE_ERROR(ConfigError);

#undef FASA_DEFINE_ERROR

class NonZeroExit : public Error {
public:
    NonZeroExit(int code, std::string stderr_excerpt)
        : Error("external command exited with code " + std::to_string(code) +
                (stderr_excerpt.empty() ? std::string{} : ": " + stderr_excerpt)),
          code_(code), stderr_excerpt_(std::move(stderr_excerpt)) {}

    int code() const noexcept { return code_; }
    const std::string& stderr_excerpt() const noexcept { return stderr_excerpt_; }

private:
    int code_;
    std::string stderr_excerpt_;
};

} // namespace fasa
