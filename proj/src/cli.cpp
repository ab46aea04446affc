#include "milnelab/common.hpp"
