#pragma once

#include <stdexcept>
#include <string>

namespace pdro {

/// Root of every error raised by the library. The CLI maps these to exit status 1.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define PDRO_DEFINE_ERROR(Name)                                                                    \
    class Name : public Error {                                                                    \
    public:                                                                                        \
        using Error::Error;                                                                        \
    }

PDRO_DEFINE_ERROR(FormatError);
PDRO_DEFINE_ERROR(ConsistencyError);
PDRO_DEFINE_ERROR(DimensionError);
PDRO_DEFINE_ERROR(ParameterError);
PDRO_DEFINE_ERROR(NumericError);
PDRO_DEFINE_ERROR(CapabilityError);
PDRO_DEFINE_ERROR(SizeError);
PDRO_DEFINE_ERROR(RankError);
PDRO_DEFINE_ERROR(IoError);
PDRO_DEFINE_ERROR(DegenerateGradientError);
PDRO_DEFINE_ERROR(UndefinedRateError);
PDRO_DEFINE_ERROR(UndefinedStatisticError);

#undef PDRO_DEFINE_ERROR

} // namespace pdro
