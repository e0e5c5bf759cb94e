"""
异常体系：所有业务异常都继承 Ove6dError，并携带命令行退出码。
0 正常，2 配置错误，3 数据错误，4 数值错误。
"""


class Ove6dError(Exception):
    """项目异常基类"""
    exit_code: int = 1


# =============================================================================
# 三大类
# =============================================================================
class ConfigError(Ove6dError):
    """配置文件解析或校验失败"""
    exit_code = 2


class DataError(Ove6dError):
    """输入数据缺失、格式错误或内容不合法"""
    exit_code = 3


class NumericalError(Ove6dError):
    """数值计算失败（NaN、发散、梯度检查不通过）"""
    exit_code = 4


# =============================================================================
# 具体异常
# =============================================================================
class InvalidArgumentError(DataError, ValueError):
    """参数不满足前置条件"""


class MeshParseError(DataError):
    """网格文件解析失败，带行号（OBJ）或字节偏移（PLY）"""

    def __init__(self, message: str, line: int | None = None, offset: int | None = None):
        location = []
        if line is not None:
            location.append(f"行 {line}")
        if offset is not None:
            location.append(f"偏移 {offset}")
        suffix = f" ({', '.join(location)})" if location else ""
        super().__init__(f"{message}{suffix}")
        self.line = line
        self.offset = offset


class EmptyFrameError(DataError):
    """物体完全位于相机后方，无法渲染"""


class RenderError(DataError):
    """渲染失败"""


class NoObjectError(DataError):
    """掩码为空或像素数过少"""


class InvalidDepthError(DataError):
    """掩码内没有有效深度"""


class EmptyPointCloudError(DataError):
    """反投影得到空点云"""


class DegenerateRegressionError(NumericalError):
    """平面内旋转回归输出的范数过小"""


class EstimationFailureError(DataError):
    """级联估计没有任何候选可用"""


class CodebookNotFoundError(DataError):
    """未注册该物体的视点码本"""


class CodebookFormatError(DataError):
    """码本文件魔数或版本不匹配"""


class CodebookTruncatedError(CodebookFormatError):
    """码本文件长度不足"""


class CheckpointFormatError(DataError):
    """权重文件格式错误"""


class VsdError(DataError):
    """VSD 可见性并集为空"""


class DivergenceError(NumericalError):
    """训练损失出现 NaN/Inf"""


class GradientCheckError(NumericalError):
    """有限差分梯度检查失败"""
