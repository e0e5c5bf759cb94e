"""
测试 services 包的初始化文件
"""

