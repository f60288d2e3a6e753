from rest_framework import serializers
from .models import AgentRecord, AlignmentRecord, EvaluationRecord


class AgentRecordSerializer(serializers.ModelSerializer):
    """
    Serializer for AgentRecord with a count of its alignment attempts
    """
    alignment_attempts = serializers.SerializerMethodField()

    class Meta:
        model = AgentRecord
        fields = [
            'record_id', 'agent_id', 'payload', 'metric', 'is_origin',
            'width', 'height', 'fx', 'fy', 'cx', 'cy', 'semantic_dim',
            'state', 'transform', 'frames_received', 'cache_dropped',
            'alignment_attempts', 'created_at', 'updated_at'
        ]
        read_only_fields = fields

    def get_alignment_attempts(self, obj):
        return obj.alignments.count()


class AlignmentRecordSerializer(serializers.ModelSerializer):
    """
    Serializer for AlignmentRecord; the agent is shown by its agent id
    """
    agent_id = serializers.IntegerField(source='agent.agent_id', read_only=True)

    class Meta:
        model = AlignmentRecord
        fields = [
            'record_id', 'agent_id', 'anchor_id', 'frame_i', 'frame_j',
            'stage1_translation', 'stage1_rotation', 'stage2_translation',
            'stage2_rotation', 'gate_translation_m', 'gate_rotation_deg',
            'accepted', 'reason', 'transform', 'created_at'
        ]
        read_only_fields = fields


class EvaluationRecordSerializer(serializers.ModelSerializer):

    class Meta:
        model = EvaluationRecord
        fields = [
            'record_id', 'run', 'mode', 'agent_id', 'views', 'psnr',
            'depth_l1', 'translation_err', 'rotation_err', 'scale_err',
            'created_at'
        ]
        read_only_fields = fields
