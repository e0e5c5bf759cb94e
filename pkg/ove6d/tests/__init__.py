"""
测试包的初始化文件
"""

